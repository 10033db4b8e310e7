// DOM wiring: builds the controls, binds them to the store, and keeps the
// comparison pane in sync.

import { FloodApi } from "./api.js";
import { ComparisonView } from "./comparison.js";
import { FloodStore, LEVEL_MAX_M, LEVEL_MIN_M, ViewState } from "./store.js";

export interface App {
  store: FloodStore;
  comparison: ComparisonView;
}

export function mountApp(
  root: HTMLElement,
  api: FloodApi = new FloodApi(),
  debounceMs?: number,
): App {
  root.innerHTML = `
    <form class="query-form">
      <div class="mode-row">
        <label><input type="radio" name="mode" value="address" checked> address</label>
        <label><input type="radio" name="mode" value="upload"> upload</label>
      </div>
      <input type="text" class="address-input" placeholder="street address" aria-label="address">
      <input type="file" class="upload-input" accept="image/*" aria-label="photo upload" hidden>
      <label class="level-row">
        flood level: <output class="level-value">1.0</output> m
        <input type="range" class="level-slider" min="${LEVEL_MIN_M}" max="${LEVEL_MAX_M}"
               step="0.05" value="1.0" aria-label="flood level">
      </label>
      <button type="submit" class="submit-btn">Flood</button>
      <label class="overlay-row"><input type="checkbox" class="mask-toggle"> show mask</label>
    </form>
    <div class="error-banner" role="alert" hidden>
      <span class="error-text"></span>
      <button type="button" class="retry-btn" hidden>retry</button>
    </div>
    <div class="comparison-root"></div>
  `;

  const form = query<HTMLFormElement>(root, ".query-form");
  const addressInput = query<HTMLInputElement>(root, ".address-input");
  const uploadInput = query<HTMLInputElement>(root, ".upload-input");
  const slider = query<HTMLInputElement>(root, ".level-slider");
  const levelValue = query<HTMLOutputElement>(root, ".level-value");
  const submitBtn = query<HTMLButtonElement>(root, ".submit-btn");
  const maskToggle = query<HTMLInputElement>(root, ".mask-toggle");
  const banner = query<HTMLDivElement>(root, ".error-banner");
  const errorText = query<HTMLSpanElement>(root, ".error-text");
  const retryBtn = query<HTMLButtonElement>(root, ".retry-btn");

  const comparison = new ComparisonView(query(root, ".comparison-root"));

  const sync = (state: ViewState) => {
    addressInput.hidden = state.inputMode !== "address";
    uploadInput.hidden = state.inputMode !== "upload";
    levelValue.textContent = state.floodLevelM.toFixed(2);
    submitBtn.disabled = state.requestInFlight;
    submitBtn.textContent = state.requestInFlight ? "Flooding..." : "Flood";
    banner.hidden = state.error === null;
    errorText.textContent = state.error?.message ?? "";
    retryBtn.hidden = !(state.error?.retryable ?? false);
    comparison.render(state.lastResult, state.showMaskOverlay);
  };

  const store = new FloodStore(api, sync, debounceMs);

  for (const radio of root.querySelectorAll<HTMLInputElement>('input[name="mode"]')) {
    radio.addEventListener("change", () => {
      if (radio.checked) store.setInputMode(radio.value as "address" | "upload");
    });
  }
  addressInput.addEventListener("input", () => store.setAddress(addressInput.value));
  uploadInput.addEventListener("change", () => {
    const file = uploadInput.files?.[0];
    if (file) void store.setUpload(file);
  });
  slider.addEventListener("input", () => store.onLevelChange(Number(slider.value)));
  maskToggle.addEventListener("change", () => store.toggleMaskOverlay());
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void store.submit();
  });
  retryBtn.addEventListener("click", () => void store.submit());

  sync(store.state);
  return { store, comparison };
}

function query<T extends Element>(root: ParentNode, selector: string): T {
  const node = root.querySelector<T>(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node;
}
