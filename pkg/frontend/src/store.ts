// UI state machine. One source of truth, one listener, and a hard
// guarantee: at most one /api/flood request is ever in flight.

import { ApiError, FloodApi, FloodPayload, pngDataUrl } from "./api.js";
import { debounce, Debounced } from "./debounce.js";

export type InputMode = "address" | "upload";

export interface ResultView {
  originalUrl: string;
  floodedUrl: string;
  maskUrl: string;
  maskArea: number;
  levelM: number;
  diagnostics: Record<string, unknown>;
}

export interface ErrorView {
  message: string;
  retryable: boolean;
}

export interface ViewState {
  inputMode: InputMode;
  address: string;
  headingDeg: number | undefined;
  floodLevelM: number;
  styleSeed: number;
  requestInFlight: boolean;
  lastResult: ResultView | null;
  error: ErrorView | null;
  showMaskOverlay: boolean;
}

export const LEVEL_MIN_M = 0;
export const LEVEL_MAX_M = 3;
export const DEBOUNCE_MS = 300;

function initialState(): ViewState {
  return {
    inputMode: "address",
    address: "",
    headingDeg: undefined,
    floodLevelM: 1.0,
    styleSeed: 0,
    requestInFlight: false,
    lastResult: null,
    error: null,
    showMaskOverlay: false,
  };
}

function errorMessage(e: ApiError): string {
  switch (e.code) {
    case "no_imagery":
      return "no imagery at this address";
    case "network":
      return "could not reach the server";
    case "upstream_unavailable":
      return "street imagery service is unavailable";
    default:
      return e.message;
  }
}

export class FloodStore {
  state: ViewState = initialState();

  private upload: Blob | null = null;
  private uploadDataUrl: string | null = null;
  private readonly debouncedResubmit: Debounced<[]>;
  private resubmitQueued = false;

  constructor(
    private readonly api: FloodApi,
    private readonly onChange: (state: ViewState) => void = () => {},
    debounceMs: number = DEBOUNCE_MS,
  ) {
    this.debouncedResubmit = debounce(() => void this.resubmit(), debounceMs);
  }

  private emit(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.state);
  }

  setInputMode(mode: InputMode): void {
    this.emit({ inputMode: mode });
  }

  setAddress(address: string): void {
    this.emit({ address });
  }

  setHeading(headingDeg: number | undefined): void {
    this.emit({ headingDeg });
  }

  setStyleSeed(styleSeed: number): void {
    this.emit({ styleSeed });
  }

  toggleMaskOverlay(): void {
    this.emit({ showMaskOverlay: !this.state.showMaskOverlay });
  }

  async setUpload(image: Blob): Promise<void> {
    this.upload = image;
    this.uploadDataUrl = await blobToDataUrl(image);
    this.emit({ inputMode: "upload" });
  }

  hasInput(): boolean {
    return this.state.inputMode === "address"
      ? this.state.address.trim().length > 0
      : this.upload !== null;
  }

  /** Submit the current query; ignored while a request is in flight. */
  async submit(): Promise<void> {
    if (this.state.requestInFlight || !this.hasInput()) return;
    this.emit({ requestInFlight: true, error: null });
    const level = this.state.floodLevelM;
    const params = { levelM: level, styleSeed: this.state.styleSeed };
    try {
      let payload: FloodPayload;
      let originalUrl: string;
      if (this.state.inputMode === "address") {
        payload = await this.api.floodByAddress(
          this.state.address.trim(),
          this.state.headingDeg,
          params,
        );
        originalUrl = payload.original_png_b64
          ? pngDataUrl(payload.original_png_b64)
          : "";
      } else {
        payload = await this.api.floodByUpload(this.upload as Blob, params);
        originalUrl = this.uploadDataUrl ?? "";
      }
      this.emit({
        requestInFlight: false,
        lastResult: {
          originalUrl,
          floodedUrl: pngDataUrl(payload.flooded_png_b64),
          maskUrl: pngDataUrl(payload.mask_png_b64),
          maskArea: payload.mask_area,
          levelM: level,
          diagnostics: payload.diagnostics,
        },
      });
    } catch (e) {
      const error: ErrorView =
        e instanceof ApiError
          ? { message: errorMessage(e), retryable: e.retryable || e.code === "network" }
          : { message: String(e), retryable: false };
      // everything but the banner survives a failed request
      this.emit({ requestInFlight: false, error });
    } finally {
      if (this.resubmitQueued) {
        this.resubmitQueued = false;
        void this.submit();
      }
    }
  }

  /**
   * Slider movement: update the level immediately, re-request after the
   * debounce window. No result or no input yet means nothing to refresh;
   * an unchanged level issues no request.
   */
  onLevelChange(levelM: number): void {
    const clamped = Math.min(LEVEL_MAX_M, Math.max(LEVEL_MIN_M, levelM));
    if (clamped === this.state.floodLevelM) return;
    this.emit({ floodLevelM: clamped });
    if (this.state.lastResult === null || !this.hasInput()) return;
    this.debouncedResubmit();
  }

  private async resubmit(): Promise<void> {
    if (this.state.requestInFlight) {
      // never overlap /api/flood calls; run again once the current one lands
      this.resubmitQueued = true;
      return;
    }
    await this.submit();
  }
}

function blobToDataUrl(blob: Blob): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => resolve(String(reader.result));
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(blob);
  });
}
