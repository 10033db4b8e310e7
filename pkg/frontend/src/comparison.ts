// Before/after comparison pane with a draggable divider and an optional
// mask overlay.

import { ResultView } from "./store.js";

const MASK_OVERLAY_OPACITY = 0.4;

export class ComparisonView {
  private readonly beforeImg: HTMLImageElement;
  private readonly afterImg: HTMLImageElement;
  private readonly maskImg: HTMLImageElement;
  private readonly afterClip: HTMLDivElement;
  private readonly divider: HTMLInputElement;
  private readonly placeholder: HTMLParagraphElement;
  private readonly areaLabel: HTMLSpanElement;
  private readonly frame: HTMLDivElement;

  constructor(private readonly root: HTMLElement) {
    this.placeholder = el("p", "placeholder");
    this.placeholder.textContent =
      "Enter an address or upload a photo, pick a flood level, and press Flood.";

    this.beforeImg = el("img", "before");
    this.beforeImg.alt = "original scene";
    this.afterImg = el("img", "after");
    this.afterImg.alt = "flooded scene";
    this.maskImg = el("img", "mask-overlay");
    this.maskImg.alt = "flood mask";
    this.maskImg.style.opacity = String(MASK_OVERLAY_OPACITY);
    this.maskImg.style.display = "none";

    this.afterClip = el("div", "after-clip");
    this.afterClip.appendChild(this.afterImg);

    this.divider = el("input", "divider");
    this.divider.type = "range";
    this.divider.min = "0";
    this.divider.max = "100";
    this.divider.value = "50";
    this.divider.setAttribute("aria-label", "before/after divider");
    this.divider.addEventListener("input", () => this.applyDivider());

    this.areaLabel = el("span", "mask-area");

    this.frame = el("div", "compare-frame");
    this.frame.append(this.beforeImg, this.afterClip, this.maskImg, this.divider);
    this.root.append(this.placeholder, this.frame, this.areaLabel);
    this.render(null, false);
  }

  render(result: ResultView | null, showMask: boolean): void {
    if (result === null) {
      this.placeholder.style.display = "";
      this.frame.style.display = "none";
      this.areaLabel.textContent = "";
      return;
    }
    this.placeholder.style.display = "none";
    this.frame.style.display = "";
    this.beforeImg.src = result.originalUrl;
    this.afterImg.src = result.floodedUrl;
    this.maskImg.src = result.maskUrl;
    this.maskImg.style.display = showMask ? "" : "none";
    this.areaLabel.textContent = `flooded pixels: ${result.maskArea}`;
    this.areaLabel.dataset.maskArea = String(result.maskArea);
    this.applyDivider();
  }

  private applyDivider(): void {
    const pct = Number(this.divider.value);
    this.afterClip.style.width = `${pct}%`;
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}
