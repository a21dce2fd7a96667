/**
 * End-to-end contract test against the real service process (with a scripted
 * mock chat backend): analyze a bundled fake sample, check the overlay is
 * non-empty and the score is passed through verbatim, and verify that a
 * rapid double-send yields replies in send order.
 */

import { type ChildProcess, spawn } from "node:child_process";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { inflateSync } from "node:zlib";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ForgelabClient } from "../src/client.js";
import { countMaskPixels } from "../src/overlay.js";
import { SendQueue } from "../src/queue.js";

const TEMPLATE_FAKE_REPLY =
  "Yes. This is a deepfake image, and the artifact is at the center face of the image.";

let proc: ChildProcess;
let client: ForgelabClient;
let imagePath: string;
let baseUrl: string;

beforeAll(async () => {
  const here = dirname(fileURLToPath(import.meta.url));
  proc = spawn("python3", [join(here, "e2e_server.py")], {
    cwd: join(here, "..", ".."),
    stdio: ["ignore", "pipe", "inherit"],
  });
  const ready = await new Promise<string>((resolve, reject) => {
    let buffer = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/READY (\d+) (\S+)/);
      if (match) resolve(`${match[1]} ${match[2]}`);
    });
    proc.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
    setTimeout(() => reject(new Error("server start timeout")), 30_000);
  });
  const [port, path] = ready.split(" ");
  imagePath = path;
  baseUrl = `http://127.0.0.1:${port}`;
  client = new ForgelabClient(baseUrl);
  for (let i = 0; i < 100; i++) {
    try {
      if (await client.health()) break;
    } catch {
      await new Promise((r) => setTimeout(r, 100));
    }
  }
}, 60_000);

afterAll(() => {
  proc?.kill();
});

describe("web UI end-to-end", () => {
  it("health reports ok", async () => {
    expect(await client.health()).toBe(true);
  }, 20_000);

  it("analyzing the bundled fake sample gives a verbatim score and a non-empty overlay", async () => {
    const bytes = readFileSync(imagePath);
    const result = await client.analyze(new Blob([bytes]), "e2e-session");

    // the score badge renders String(score) with no client-side rounding
    expect(result.score).toBeGreaterThanOrEqual(0);
    expect(result.score).toBeLessThanOrEqual(1);
    expect(String(result.score)).not.toBe("");

    // scripted mock answers the analyze prompt with the template reply
    expect(result.answer_text).toBe(TEMPLATE_FAKE_REPLY);
    expect(result.parsed.label).toBe("fake");
    expect(result.prompt_text).toContain("Is this a deepfake image?");

    // decode the grayscale PNG without a canvas: raw scanline filters only
    const png = Buffer.from(result.seg_map, "base64");
    expect(png.subarray(0, 8)).toEqual(
      Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
    );
    const gray = decodeGrayPng(png);
    expect(gray.length).toBe(224 * 224);
    const rgba = new Uint8ClampedArray(gray.length * 4);
    gray.forEach((v, i) => {
      rgba[i * 4] = v;
      rgba[i * 4 + 3] = 255;
    });
    expect(countMaskPixels(rgba)).toBeGreaterThan(0); // non-empty overlay
  }, 60_000);

  it("rapid double-send through the queue preserves reply order", async () => {
    const queue = new SendQueue();
    const replies: string[] = [];
    const record = (reply: string) => {
      replies.push(reply);
      return reply;
    };
    const [first, second] = await Promise.all([
      queue.enqueue(() => client.chat("e2e-session", "first question")).then(record),
      queue.enqueue(() => client.chat("e2e-session", "second question")).then(record),
    ]);
    expect(first).toBe("reply one");
    expect(second).toBe("reply two");
    expect(replies).toEqual(["reply one", "reply two"]);
  }, 60_000);

  it("serves the built UI shell under /ui", async () => {
    const resp = await fetch(`${baseUrl}/ui/`);
    expect(resp.status).toBe(200);
    expect(await resp.text()).toContain("forgelab");
  }, 20_000);
});

/** Minimal grayscale PNG decoder (bit depth 8, color type 0) using zlib. */
function decodeGrayPng(png: Buffer): Uint8Array {
  let width = 0;
  let height = 0;
  const idat: Buffer[] = [];
  let off = 8;
  while (off < png.length) {
    const length = png.readUInt32BE(off);
    const type = png.toString("ascii", off + 4, off + 8);
    const data = png.subarray(off + 8, off + 8 + length);
    if (type === "IHDR") {
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      if (data[8] !== 8 || data[9] !== 0) {
        throw new Error("expected 8-bit grayscale PNG");
      }
    } else if (type === "IDAT") {
      idat.push(Buffer.from(data));
    }
    off += 12 + length;
  }
  const raw = inflateSync(Buffer.concat(idat));
  const out = new Uint8Array(width * height);
  const stride = width + 1;
  const prior = new Uint8Array(width);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * stride];
    const line = raw.subarray(y * stride + 1, (y + 1) * stride);
    const recon = new Uint8Array(width);
    for (let x = 0; x < width; x++) {
      const a = x > 0 ? recon[x - 1] : 0;
      const b = prior[x];
      const c = x > 0 ? prior[x - 1] : 0;
      let v = line[x];
      if (filter === 1) v += a;
      else if (filter === 2) v += b;
      else if (filter === 3) v += (a + b) >> 1;
      else if (filter === 4) v += paeth(a, b, c);
      recon[x] = v & 0xff;
    }
    out.set(recon, y * width);
    prior.set(recon);
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}
