/**
 * Segmentation-overlay pixel math, kept pure so it is testable without a
 * canvas. The service returns a 224x224 grayscale PNG; after the view layer
 * decodes it to RGBA pixels, these helpers turn it into a red overlay whose
 * alpha follows the user-selected opacity. Scaling to the preview size is
 * done by the canvas with image smoothing disabled (nearest neighbor) so
 * mask pixels stay faithful.
 */

export const MASK_THRESHOLD = 128;

/**
 * Map decoded grayscale RGBA pixels to overlay RGBA pixels: red wherever the
 * mask value is at or above threshold, transparent elsewhere.
 * `opacity` in [0, 1] scales the overlay alpha.
 */
export function maskToOverlay(
  pixels: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray {
  if (pixels.length % 4 !== 0) {
    throw new Error(`RGBA buffer length ${pixels.length} is not a multiple of 4`);
  }
  const clamped = Math.min(1, Math.max(0, opacity));
  const out = new Uint8ClampedArray(pixels.length);
  for (let i = 0; i < pixels.length; i += 4) {
    if (pixels[i] >= MASK_THRESHOLD) {
      out[i] = 255;
      out[i + 1] = 32;
      out[i + 2] = 32;
      out[i + 3] = Math.round(255 * clamped);
    }
  }
  return out;
}

/** Number of mask-positive pixels in a decoded grayscale RGBA buffer. */
export function countMaskPixels(pixels: Uint8ClampedArray): number {
  let n = 0;
  for (let i = 0; i < pixels.length; i += 4) {
    if (pixels[i] >= MASK_THRESHOLD) n += 1;
  }
  return n;
}
