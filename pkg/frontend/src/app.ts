/**
 * Single-view application: health-gated upload, score + overlay panel, and a
 * queued multi-turn chat transcript. Renders only service-provided values —
 * no client-side inference.
 */

import { AnalyzeResult, ForgelabClient, MAX_UPLOAD_BYTES, ServiceError } from "./client.js";
import { maskToOverlay } from "./overlay.js";
import { SendQueue } from "./queue.js";

const HEALTH_POLL_MS = 3000;
const MASK_SIZE = 224;

interface Elements {
  banner: HTMLElement;
  retry: HTMLButtonElement;
  upload: HTMLInputElement;
  uploadError: HTMLElement;
  result: HTMLElement;
  scoreBadge: HTMLElement;
  labelBadge: HTMLElement;
  regions: HTMLElement;
  promptText: HTMLElement;
  answerText: HTMLElement;
  preview: HTMLCanvasElement;
  overlay: HTMLCanvasElement;
  opacity: HTMLInputElement;
  chatForm: HTMLFormElement;
  chatInput: HTMLInputElement;
  chatSend: HTMLButtonElement;
  transcript: HTMLElement;
}

function grab(): Elements {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    banner: byId("banner"),
    retry: byId("retry"),
    upload: byId("upload"),
    uploadError: byId("upload-error"),
    result: byId("result"),
    scoreBadge: byId("score-badge"),
    labelBadge: byId("label-badge"),
    regions: byId("regions"),
    promptText: byId("prompt-text"),
    answerText: byId("answer-text"),
    preview: byId("preview"),
    overlay: byId("overlay"),
    opacity: byId("opacity"),
    chatForm: byId("chat-form"),
    chatInput: byId("chat-input"),
    chatSend: byId("chat-send"),
    transcript: byId("transcript"),
  };
}

function errorText(err: unknown): string {
  if (err instanceof ServiceError) {
    switch (err.kind) {
      case "offline":
        return "service unavailable";
      case "not-ready":
        return `service not ready: ${err.message}`;
      case "bad-request":
        return `rejected: ${err.message}`;
      case "upstream":
        return `language-model backend failed: ${err.message}`;
      default:
        return err.message;
    }
  }
  return String(err);
}

export class App {
  private readonly client: ForgelabClient;
  private readonly el: Elements;
  private readonly queue = new SendQueue();
  private sessionId = `ui-${Date.now()}-${Math.floor(Math.random() * 1e9)}`;
  private analyzed = false;
  private maskPixels: Uint8ClampedArray | null = null;
  private healthy = false;

  constructor(client: ForgelabClient, elements: Elements) {
    this.client = client;
    this.el = elements;
    this.el.retry.addEventListener("click", () => void this.pollHealth());
    this.el.upload.addEventListener("change", () => void this.onUpload());
    this.el.opacity.addEventListener("input", () => this.redrawOverlay());
    this.el.chatInput.addEventListener("input", () => this.syncSendEnabled());
    this.el.chatForm.addEventListener("submit", (ev) => {
      ev.preventDefault();
      this.onSend();
    });
    this.syncSendEnabled();
  }

  start(): void {
    void this.pollHealth();
    setInterval(() => void this.pollHealth(), HEALTH_POLL_MS);
  }

  private async pollHealth(): Promise<void> {
    try {
      this.healthy = await this.client.health();
    } catch {
      this.healthy = false;
    }
    this.el.banner.hidden = this.healthy;
    this.el.upload.disabled = !this.healthy;
    this.syncSendEnabled();
  }

  private syncSendEnabled(): void {
    const message = this.el.chatInput.value.trim();
    this.el.chatSend.disabled = !this.healthy || !this.analyzed || message === "";
  }

  private async onUpload(): Promise<void> {
    const file = this.el.upload.files?.[0];
    if (!file) return;
    this.el.uploadError.textContent = "";
    if (file.size > MAX_UPLOAD_BYTES) {
      this.el.uploadError.textContent = "image exceeds the 5 MB upload limit";
      return;
    }
    try {
      const result = await this.client.analyze(file, this.sessionId);
      await this.renderResult(file, result);
      this.analyzed = true;
      this.syncSendEnabled();
    } catch (err) {
      this.el.uploadError.textContent = errorText(err);
    }
  }

  private async renderResult(file: Blob, result: AnalyzeResult): Promise<void> {
    this.el.result.hidden = false;
    this.el.scoreBadge.textContent = String(result.score);
    this.el.labelBadge.textContent = result.parsed.label;
    this.el.labelBadge.className = `badge ${result.parsed.label}`;
    this.el.regions.textContent = result.regions_guess.length
      ? result.regions_guess.join(", ")
      : "none";
    this.el.promptText.textContent = result.prompt_text;
    this.el.answerText.textContent = result.answer_text;

    const preview = await loadImage(URL.createObjectURL(file));
    const pctx = this.el.preview.getContext("2d")!;
    pctx.clearRect(0, 0, this.el.preview.width, this.el.preview.height);
    pctx.drawImage(preview, 0, 0, this.el.preview.width, this.el.preview.height);

    const mask = await loadImage(`data:image/png;base64,${result.seg_map}`);
    const scratch = document.createElement("canvas");
    scratch.width = MASK_SIZE;
    scratch.height = MASK_SIZE;
    const sctx = scratch.getContext("2d")!;
    sctx.drawImage(mask, 0, 0);
    this.maskPixels = sctx.getImageData(0, 0, MASK_SIZE, MASK_SIZE).data;
    this.redrawOverlay();
  }

  private redrawOverlay(): void {
    if (!this.maskPixels) return;
    const opacity = Number(this.el.opacity.value) / 100;
    const overlayPixels = maskToOverlay(this.maskPixels, opacity);
    const scratch = document.createElement("canvas");
    scratch.width = MASK_SIZE;
    scratch.height = MASK_SIZE;
    scratch
      .getContext("2d")!
      .putImageData(
        new ImageData(overlayPixels as Uint8ClampedArray<ArrayBuffer>, MASK_SIZE, MASK_SIZE),
        0,
        0,
      );
    const ctx = this.el.overlay.getContext("2d")!;
    ctx.imageSmoothingEnabled = false; // nearest neighbor keeps mask pixels faithful
    ctx.clearRect(0, 0, this.el.overlay.width, this.el.overlay.height);
    ctx.drawImage(scratch, 0, 0, this.el.overlay.width, this.el.overlay.height);
  }

  private onSend(): void {
    const message = this.el.chatInput.value.trim();
    if (message === "" || this.el.chatSend.disabled) return;
    this.el.chatInput.value = "";
    this.syncSendEnabled();
    const entry = this.appendTurn("user", message);
    const pending = this.appendTurn("assistant", "…");
    // queued, not interleaved: replies land in send order
    void this.queue
      .enqueue(() => this.client.chat(this.sessionId, message))
      .then((reply) => {
        pending.textContent = reply;
      })
      .catch((err) => {
        pending.textContent = errorText(err);
        pending.classList.add("failed");
        const retry = document.createElement("button");
        retry.textContent = "retry";
        retry.addEventListener("click", () => {
          retry.remove();
          pending.classList.remove("failed");
          pending.textContent = "…";
          void this.queue
            .enqueue(() => this.client.chat(this.sessionId, message))
            .then((reply) => {
              pending.textContent = reply;
            })
            .catch((err2) => {
              pending.textContent = errorText(err2);
              pending.classList.add("failed");
              pending.appendChild(retry);
            });
        });
        pending.appendChild(retry);
      });
    entry.scrollIntoView({ block: "end" });
  }

  private appendTurn(role: "user" | "assistant", text: string): HTMLElement {
    const li = document.createElement("li");
    li.className = `turn ${role}`;
    const who = document.createElement("span");
    who.className = "who";
    who.textContent = role === "user" ? "you" : "model";
    const body = document.createElement("span");
    body.className = "text";
    body.textContent = text;
    const when = document.createElement("time");
    when.textContent = new Date().toLocaleTimeString();
    li.append(who, body, when);
    this.el.transcript.appendChild(li);
    return body;
  }
}

function loadImage(src: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("cannot decode image"));
    img.src = src;
  });
}

if (typeof document !== "undefined" && document.getElementById("banner")) {
  const app = new App(new ForgelabClient(".."), grab());
  app.start();
}
