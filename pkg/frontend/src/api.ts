// Typed client for the flood service HTTP API. The browser is a thin
// client: all model work happens server-side.

export interface FloodParams {
  levelM?: number;
  fraction?: number;
  styleSeed?: number;
}

export interface FloodPayload {
  flooded_png_b64: string;
  mask_png_b64: string;
  original_png_b64?: string;
  mask_area: number;
  diagnostics: Record<string, unknown>;
}

export interface UiConfig {
  level_min_m: number;
  level_max_m: number;
  default_fraction: number;
  address_enabled: boolean;
}

export type ErrorCode =
  | "bad_request"
  | "no_imagery"
  | "upstream_unavailable"
  | "model_error"
  | "network";

export class ApiError extends Error {
  constructor(
    public readonly code: ErrorCode,
    message: string,
    public readonly retryable: boolean,
    public readonly status: number,
  ) {
    super(message);
  }
}

function queryString(params: FloodParams): string {
  const q = new URLSearchParams();
  if (params.levelM !== undefined) q.set("level_m", String(params.levelM));
  if (params.fraction !== undefined) q.set("fraction", String(params.fraction));
  if (params.styleSeed !== undefined) q.set("style_seed", String(params.styleSeed));
  const s = q.toString();
  return s ? `?${s}` : "";
}

async function toApiError(response: Response): Promise<ApiError> {
  let code: ErrorCode = "model_error";
  let message = `request failed with status ${response.status}`;
  let retryable = false;
  try {
    const body = await response.json();
    if (typeof body.code === "string") code = body.code as ErrorCode;
    if (typeof body.message === "string") message = body.message;
    retryable = Boolean(body.retryable);
  } catch {
    // non-JSON error body: keep the defaults
  }
  return new ApiError(code, message, retryable, response.status);
}

export class FloodApi {
  constructor(
    private readonly fetchFn: typeof fetch = fetch,
    private readonly base: string = "",
  ) {}

  private async post(url: string, init: RequestInit): Promise<FloodPayload> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + url, init);
    } catch (e) {
      throw new ApiError("network", `could not reach the server: ${e}`, true, 0);
    }
    if (!response.ok) throw await toApiError(response);
    return (await response.json()) as FloodPayload;
  }

  floodByAddress(
    address: string,
    headingDeg: number | undefined,
    params: FloodParams,
  ): Promise<FloodPayload> {
    const body: Record<string, unknown> = { address };
    if (headingDeg !== undefined) body.heading_deg = headingDeg;
    return this.post(`/api/flood${queryString(params)}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  floodByUpload(image: Blob, params: FloodParams): Promise<FloodPayload> {
    const form = new FormData();
    form.append("image", image, "upload.png");
    return this.post(`/api/flood${queryString(params)}`, { method: "POST", body: form });
  }

  async config(): Promise<UiConfig> {
    const response = await this.fetchFn(this.base + "/api/config");
    if (!response.ok) throw await toApiError(response);
    return (await response.json()) as UiConfig;
  }
}

export function pngDataUrl(b64: string): string {
  return `data:image/png;base64,${b64}`;
}
