import { describe, expect, it } from "vitest";

import { MASK_THRESHOLD, countMaskPixels, maskToOverlay } from "../src/overlay.js";

function grayRgba(values: number[]): Uint8ClampedArray {
  const out = new Uint8ClampedArray(values.length * 4);
  values.forEach((v, i) => {
    out[i * 4] = v;
    out[i * 4 + 1] = v;
    out[i * 4 + 2] = v;
    out[i * 4 + 3] = 255;
  });
  return out;
}

describe("maskToOverlay", () => {
  it("marks only at-or-above-threshold pixels red", () => {
    const overlay = maskToOverlay(grayRgba([0, MASK_THRESHOLD - 1, MASK_THRESHOLD, 255]), 1);
    expect(Array.from(overlay.slice(0, 4))).toEqual([0, 0, 0, 0]);
    expect(Array.from(overlay.slice(4, 8))).toEqual([0, 0, 0, 0]);
    expect(Array.from(overlay.slice(8, 12))).toEqual([255, 32, 32, 255]);
    expect(Array.from(overlay.slice(12, 16))).toEqual([255, 32, 32, 255]);
  });

  it("scales alpha with opacity and clamps the range", () => {
    const px = grayRgba([200]);
    expect(maskToOverlay(px, 0.5)[3]).toBe(128);
    expect(maskToOverlay(px, 0)[3]).toBe(0);
    expect(maskToOverlay(px, 2)[3]).toBe(255);
    expect(maskToOverlay(px, -1)[3]).toBe(0);
  });

  it("rejects non-RGBA buffers", () => {
    expect(() => maskToOverlay(new Uint8ClampedArray(5), 1)).toThrow();
  });
});

describe("countMaskPixels", () => {
  it("counts mask-positive pixels", () => {
    expect(countMaskPixels(grayRgba([0, 127, 128, 255, 10]))).toBe(2);
    expect(countMaskPixels(grayRgba([]))).toBe(0);
  });
});
