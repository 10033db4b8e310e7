// @vitest-environment jsdom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { FloodApi } from "../src/api.js";
import { mountApp } from "../src/app.js";
import { makeStubServer, maskAreaForLevel } from "./stub-server.js";

function mount(mode: Parameters<typeof makeStubServer>[0] = "ok") {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app")!;
  const stub = makeStubServer(mode);
  const app = mountApp(root, new FloodApi(stub.fetchFn), 300);
  return { root, stub, app };
}

function type(root: HTMLElement, selector: string, value: string) {
  const input = root.querySelector<HTMLInputElement>(selector)!;
  input.value = value;
  input.dispatchEvent(new Event("input", { bubbles: true }));
}

function submit(root: HTMLElement) {
  root.querySelector<HTMLFormElement>(".query-form")!.dispatchEvent(
    new Event("submit", { bubbles: true, cancelable: true }),
  );
}

async function settles(app: { store: { state: { requestInFlight: boolean } } }) {
  await vi.waitFor(() => expect(app.store.state.requestInFlight).toBe(false));
}

describe("integration against the stub server", () => {
  it("shows a placeholder before any result", () => {
    const { root } = mount();
    const placeholder = root.querySelector<HTMLElement>(".placeholder")!;
    expect(placeholder.style.display).not.toBe("none");
    expect(placeholder.textContent).toMatch(/enter an address/i);
  });

  it("submit renders the before/after panes", async () => {
    const { root, app } = mount();
    type(root, ".address-input", "12 River Road");
    submit(root);
    await settles(app);

    expect(root.querySelector<HTMLElement>(".placeholder")!.style.display).toBe("none");
    const before = root.querySelector<HTMLImageElement>("img.before")!;
    const after = root.querySelector<HTMLImageElement>("img.after")!;
    expect(before.src).toMatch(/^data:image\/png;base64,/);
    expect(after.src).toMatch(/^data:image\/png;base64,/);
  });

  it("slider drag issues exactly one request after the debounce window", async () => {
    vi.useFakeTimers();
    try {
      const { root, stub, app } = mount();
      type(root, ".address-input", "12 River Road");
      submit(root);
      await settles(app);
      expect(stub.calls).toHaveLength(1);

      for (const v of ["1.2", "1.5", "1.8", "2.1"]) type(root, ".level-slider", v);
      expect(stub.calls).toHaveLength(1);
      await vi.advanceTimersByTimeAsync(300);
      await settles(app);
      expect(stub.calls).toHaveLength(2);
      expect(stub.calls[1]!.levelM).toBe(2.1);
    } finally {
      vi.useRealTimers();
    }
  });

  it("mask-area label increases across fixture levels", async () => {
    vi.useFakeTimers();
    try {
      const { root, app } = mount();
      type(root, ".address-input", "12 River Road");
      type(root, ".level-slider", "0.5");
      await vi.advanceTimersByTimeAsync(300);
      submit(root);
      await settles(app);
      const label = root.querySelector<HTMLElement>(".mask-area")!;
      expect(label.textContent).toContain(String(maskAreaForLevel(0.5)));
      const low = Number(label.dataset.maskArea);

      type(root, ".level-slider", "1.5");
      await vi.advanceTimersByTimeAsync(300);
      await settles(app);
      const high = Number(label.dataset.maskArea);
      expect(high).toBeGreaterThan(low);
      expect(label.textContent).toContain(String(maskAreaForLevel(1.5)));
    } finally {
      vi.useRealTimers();
    }
  });

  it("double submit while in flight sends one request", async () => {
    const { root, stub, app } = mount();
    type(root, ".address-input", "12 River Road");
    submit(root);
    submit(root); // button double-click
    await settles(app);
    expect(stub.calls).toHaveLength(1);
  });

  it("renders a human-readable error for missing imagery", async () => {
    const { root, app } = mount("no_imagery");
    type(root, ".address-input", "Atlantis");
    submit(root);
    await settles(app);
    const banner = root.querySelector<HTMLElement>(".error-banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("no imagery at this address");
  });

  it("shows a retry affordance for retryable failures and retries", async () => {
    const { root, stub, app } = mount("upstream_down");
    type(root, ".address-input", "12 River Road");
    submit(root);
    await settles(app);
    const retry = root.querySelector<HTMLButtonElement>(".retry-btn")!;
    expect(retry.hidden).toBe(false);

    stub.setMode("ok");
    retry.click();
    await settles(app);
    expect(root.querySelector<HTMLElement>(".error-banner")!.hidden).toBe(true);
    expect(app.store.state.lastResult).not.toBeNull();
  });

  it("mask overlay toggles at 40% opacity", async () => {
    const { root, app } = mount();
    type(root, ".address-input", "12 River Road");
    submit(root);
    await settles(app);

    const overlay = root.querySelector<HTMLImageElement>("img.mask-overlay")!;
    expect(overlay.style.display).toBe("none");
    const toggle = root.querySelector<HTMLInputElement>(".mask-toggle")!;
    toggle.checked = true;
    toggle.dispatchEvent(new Event("change", { bubbles: true }));
    expect(overlay.style.display).not.toBe("none");
    expect(Number(overlay.style.opacity)).toBeCloseTo(0.4);
  });

  it("disables the submit button while a request is running", async () => {
    const { root, app } = mount();
    type(root, ".address-input", "12 River Road");
    const button = root.querySelector<HTMLButtonElement>(".submit-btn")!;
    submit(root);
    expect(button.disabled).toBe(true);
    await settles(app);
    expect(button.disabled).toBe(false);
  });
});
