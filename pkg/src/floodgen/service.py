"""HTTP facade over inference plus an external street-imagery client.

Endpoints:
  POST /api/flood   multipart image upload OR JSON {"address": ...};
                    query params level_m | fraction, style_seed
  GET  /api/health  200 once the model is loaded, 503 while loading
  GET  /api/config  slider bounds and feature flags for the web client

The imagery client is an interface: the live implementation calls the
geocoding + static street-view APIs with STREETVIEW_API_KEY, and a stub
serves fixtures so the whole contract is testable with zero network.
"""

from __future__ import annotations

import base64
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image as PILImage

from . import inference, networks
from .errors import BadRequest, MissingApiKey, NoImagery, UpstreamUnavailable
from .sim_dataset import FloodMask, Image

API_ERROR_STATUS = {
    "bad_request": 400,
    "upstream_unavailable": 502,
    "no_imagery": 404,
    "model_error": 500,
}

STREETVIEW_IMAGE_SIZE = 640  # static-API ceiling


@dataclass(frozen=True)
class AddressQuery:
    address: str
    heading_deg: float | None = None
    fov_deg: float | None = None

    def __post_init__(self):
        if not self.address.strip():
            raise BadRequest("address must be nonempty")
        if self.heading_deg is not None and not 0.0 <= self.heading_deg < 360.0:
            raise BadRequest("heading must lie in [0, 360)")
        if self.fov_deg is not None and not 0.0 < self.fov_deg <= 120.0:
            raise BadRequest("fov must lie in (0, 120]")


@dataclass(frozen=True)
class ServiceConfig:
    port: int = 8080
    level_min_m: float = 0.0
    level_max_m: float = 3.0
    default_fraction: float = 0.3
    request_timeout_s: float = 60.0
    workers: int = 2
    cache_ttl_s: float = 3600.0


def _api_error(code: str, message: str, retryable: bool = False) -> JSONResponse:
    return JSONResponse(
        status_code=API_ERROR_STATUS[code],
        content={"code": code, "message": message, "retryable": retryable},
    )


# ---------------------------------------------------------------------------
# street-view clients


class StubStreetView:
    """Fixture-backed imagery client for offline operation and tests."""

    def __init__(self, image: Image | None = None, error: Exception | None = None):
        self.image = image
        self.error = error
        self.calls = 0

    def fetch(self, query: AddressQuery) -> Image:
        self.calls += 1
        if self.error is not None:
            raise self.error
        if self.image is None:
            raise NoImagery(f"no imagery for {query.address!r}")
        return self.image


class GoogleStreetView:
    """Live client: geocode the address, then fetch a static street-level image."""

    GEOCODE_URL = "https://maps.googleapis.com/maps/api/geocode/json"
    IMAGE_URL = "https://maps.googleapis.com/maps/api/streetview"

    def __init__(self, api_key: str | None = None, timeout_s: float = 10.0, session=None):
        key = api_key or os.environ.get("STREETVIEW_API_KEY")
        if not key:
            raise MissingApiKey("STREETVIEW_API_KEY is not set")
        import requests

        self.key = key
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def fetch(self, query: AddressQuery) -> Image:
        try:
            geo = self.session.get(
                self.GEOCODE_URL,
                params={"address": query.address, "key": self.key},
                timeout=self.timeout_s,
            )
            geo.raise_for_status()
            results = geo.json().get("results", [])
            if not results:
                raise NoImagery(f"address {query.address!r} did not geocode")
            loc = results[0]["geometry"]["location"]
            params = {
                "size": f"{STREETVIEW_IMAGE_SIZE}x{STREETVIEW_IMAGE_SIZE}",
                "location": f"{loc['lat']},{loc['lng']}",
                "key": self.key,
            }
            if query.heading_deg is not None:
                params["heading"] = str(query.heading_deg)
            if query.fov_deg is not None:
                params["fov"] = str(query.fov_deg)
            img = self.session.get(self.IMAGE_URL, params=params, timeout=self.timeout_s)
            if img.status_code == 404:
                raise NoImagery(f"no street imagery near {query.address!r}")
            img.raise_for_status()
            pil = PILImage.open(io.BytesIO(img.content)).convert("RGB")
        except (NoImagery, MissingApiKey):
            raise
        except Exception as e:
            raise UpstreamUnavailable(f"street view fetch failed: {e}") from e
        return Image(np.asarray(pil, dtype=np.float32) / 255.0)


class CachedStreetView:
    """TTL cache over any imagery client, keyed by (address, heading, fov)."""

    def __init__(self, inner, ttl_s: float = 3600.0, clock=time.monotonic):
        self.inner = inner
        self.ttl_s = ttl_s
        self.clock = clock
        self._cache: dict[tuple, tuple[float, Image]] = {}
        self.hits = 0
        self.misses = 0

    def fetch(self, query: AddressQuery) -> Image:
        key = (query.address, query.heading_deg, query.fov_deg)
        now = self.clock()
        entry = self._cache.get(key)
        if entry is not None and now - entry[0] < self.ttl_s:
            self.hits += 1
            return entry[1]
        self.misses += 1
        image = self.inner.fetch(query)
        self._cache[key] = (now, image)
        return image

    def stats(self) -> dict:
        total = self.hits + self.misses
        return {
            "hits": self.hits,
            "misses": self.misses,
            "hit_ratio": (self.hits / total) if total else 0.0,
        }


def fetch_streetview(query: AddressQuery, client) -> Image:
    """Fetch one street-level image through a (possibly cached) client."""
    return client.fetch(query)


# ---------------------------------------------------------------------------
# encoding helpers


def _png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    PILImage.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _image_payload(img: Image) -> str:
    return _png_b64(img.to_uint8())


def _mask_payload(mask: FloodMask) -> str:
    return _png_b64((mask.bits * 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# application


def create_app(
    checkpoint_path: str | Path | None = None,
    streetview=None,
    config: ServiceConfig | None = None,
    model: inference.FloodModel | None = None,
    defer_load: bool = False,
    static_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service; the model loads eagerly unless ``defer_load``.

    The checkpoint is loaded once and shared read-only; inference runs in a
    bounded worker pool under the configured time budget.  ``static_dir``
    (the web client's build output) is served at the root when given.
    """
    cfg = config or ServiceConfig()
    app = FastAPI(title="floodgen")
    state = app.state
    state.config = cfg
    state.model = model
    state.checkpoint_id = None
    state.started_at = time.monotonic()
    state.streetview = CachedStreetView(streetview, cfg.cache_ttl_s) if streetview else None
    state.pool = ThreadPoolExecutor(max_workers=cfg.workers)

    def load_model() -> None:
        if checkpoint_path is not None:
            state.model = inference.load_flood_model(checkpoint_path)
            state.checkpoint_id = networks.checkpoint_digest(checkpoint_path)

    state.load_model = load_model
    if not defer_load and checkpoint_path is not None:
        load_model()
    if model is not None and checkpoint_path is None:
        state.checkpoint_id = "inline"

    @app.get("/api/health")
    def health():
        if state.model is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        body = {
            "status": "ok",
            "checkpoint_id": state.checkpoint_id,
            "uptime_s": time.monotonic() - state.started_at,
        }
        if state.streetview is not None:
            body["cache"] = state.streetview.stats()
        return body

    @app.get("/api/config")
    def ui_config():
        return {
            "level_min_m": cfg.level_min_m,
            "level_max_m": cfg.level_max_m,
            "default_fraction": cfg.default_fraction,
            "address_enabled": state.streetview is not None,
        }

    @app.post("/api/flood")
    async def flood_endpoint(request: Request):
        if state.model is None:
            return JSONResponse(status_code=503, content={"status": "loading"})

        level_m = request.query_params.get("level_m")
        fraction = request.query_params.get("fraction")
        style_seed = request.query_params.get("style_seed")
        content_type = request.headers.get("content-type", "")

        image: Image | None = None
        address: str | None = None
        heading = fov = None
        try:
            if content_type.startswith("multipart/form-data"):
                form = await request.form()
                upload = form.get("image")
                address = form.get("address") or None
                if upload is not None:
                    data = await upload.read()
                    pil = PILImage.open(io.BytesIO(data)).convert("RGB")
                    image = Image(np.asarray(pil, dtype=np.float32) / 255.0)
            elif content_type.startswith("application/json"):
                body = await request.json()
                address = body.get("address")
                heading = body.get("heading_deg")
                fov = body.get("fov_deg")
            else:
                return _api_error("bad_request", f"unsupported content type {content_type!r}")
        except Exception as e:
            return _api_error("bad_request", f"could not parse request: {e}")

        if (image is None) == (address is None):
            return _api_error("bad_request", "provide exactly one of: image upload, address")
        if level_m is not None and fraction is not None:
            return _api_error("bad_request", "level_m and fraction are mutually exclusive")

        original_b64 = None
        if address is not None:
            if state.streetview is None:
                return _api_error("upstream_unavailable", "no imagery client configured", retryable=False)
            try:
                query = AddressQuery(
                    address=address,
                    heading_deg=None if heading is None else float(heading),
                    fov_deg=None if fov is None else float(fov),
                )
                image = fetch_streetview(query, state.streetview)
            except BadRequest as e:
                return _api_error("bad_request", str(e))
            except NoImagery as e:
                return _api_error("no_imagery", str(e))
            except UpstreamUnavailable as e:
                return _api_error("upstream_unavailable", str(e), retryable=True)
            original_b64 = _image_payload(image)

        try:
            flood_request = inference.FloodRequest(
                image=image,
                flood_level_m=None if level_m is None else float(level_m),
                flood_fraction=None if fraction is None else float(fraction),
                style_seed=None if style_seed is None else int(style_seed),
            )
        except (BadRequest, ValueError) as e:
            return _api_error("bad_request", str(e))

        future = state.pool.submit(inference.flood, flood_request, state.model)
        try:
            result = future.result(timeout=cfg.request_timeout_s)
        except FutureTimeout:
            future.cancel()
            return JSONResponse(
                status_code=503,
                content={"code": "model_error", "message": "inference budget exceeded", "retryable": True},
            )
        except Exception as e:
            return _api_error("model_error", f"{type(e).__name__}: {e}")

        body = {
            "flooded_png_b64": _image_payload(result.flooded),
            "mask_png_b64": _mask_payload(result.mask),
            "mask_area": result.mask.area(),
            "diagnostics": result.diagnostics,
        }
        if original_b64 is not None:
            body["original_png_b64"] = original_b64
        return body

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="webui")

    return app


def serve(
    checkpoint_path: str | Path,
    port: int | None = None,
    host: str = "127.0.0.1",
    api_key: str | None = None,
    static_dir: str | Path | None = None,
) -> None:
    """Run the service with uvicorn; honors FLOODGEN_PORT."""
    import uvicorn

    resolved_port = port or int(os.environ.get("FLOODGEN_PORT", "8080"))
    client = None
    if api_key or os.environ.get("STREETVIEW_API_KEY"):
        client = GoogleStreetView(api_key=api_key)
    app = create_app(checkpoint_path, streetview=client, static_dir=static_dir)
    uvicorn.run(app, host=host, port=resolved_port)
