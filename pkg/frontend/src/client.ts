/**
 * Typed client for the detection service. All HTTP traffic in the UI goes
 * through this module, and every failure mode maps to a ServiceError kind so
 * the view layer can branch exhaustively.
 */

export interface ParsedLabel {
  label: "fake" | "real";
  matched_rule: string;
}

export interface AnalyzeResult {
  score: number;
  seg_map: string; // base64 PNG, 224x224 grayscale
  regions_guess: string[];
  prompt_text: string;
  answer_text: string;
  parsed: ParsedLabel;
  session_id: string;
}

export interface ChatReply {
  reply: string;
}

export type ServiceErrorKind =
  | "offline" // network failure: endpoint unreachable
  | "bad-request" // HTTP 400: rejected input
  | "not-ready" // HTTP 503: checkpoints not loadable
  | "upstream" // HTTP 502: external LLM failed
  | "http" // any other non-2xx status
  | "protocol"; // 2xx but the body is not the expected shape

export class ServiceError extends Error {
  readonly kind: ServiceErrorKind;
  readonly status?: number;

  constructor(kind: ServiceErrorKind, message: string, status?: number) {
    super(message);
    this.name = "ServiceError";
    this.kind = kind;
    this.status = status;
  }
}

export const MAX_UPLOAD_BYTES = 5 * 1024 * 1024;

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function kindForStatus(status: number): ServiceErrorKind {
  if (status === 400) return "bad-request";
  if (status === 503) return "not-ready";
  if (status === 502) return "upstream";
  return "http";
}

async function errorFromResponse(resp: Response): Promise<ServiceError> {
  let detail = "";
  try {
    const doc = (await resp.json()) as { detail?: unknown };
    if (typeof doc.detail === "string") detail = doc.detail;
  } catch {
    // non-JSON error body: keep the status line only
  }
  return new ServiceError(
    kindForStatus(resp.status),
    detail || `HTTP ${resp.status}`,
    resp.status,
  );
}

async function parseJson<T>(resp: Response, guard: (doc: unknown) => doc is T): Promise<T> {
  let doc: unknown;
  try {
    doc = await resp.json();
  } catch (err) {
    throw new ServiceError("protocol", `response is not JSON: ${String(err)}`);
  }
  if (!guard(doc)) {
    throw new ServiceError("protocol", "response JSON has an unexpected shape");
  }
  return doc;
}

function isParsedLabel(v: unknown): v is ParsedLabel {
  const d = v as ParsedLabel;
  return (
    !!d && (d.label === "fake" || d.label === "real") && typeof d.matched_rule === "string"
  );
}

function isAnalyzeResult(v: unknown): v is AnalyzeResult {
  const d = v as AnalyzeResult;
  return (
    !!d &&
    typeof d.score === "number" &&
    typeof d.seg_map === "string" &&
    Array.isArray(d.regions_guess) &&
    d.regions_guess.every((r) => typeof r === "string") &&
    typeof d.prompt_text === "string" &&
    typeof d.answer_text === "string" &&
    isParsedLabel(d.parsed) &&
    typeof d.session_id === "string"
  );
}

function isChatReply(v: unknown): v is ChatReply {
  const d = v as ChatReply;
  return !!d && typeof d.reply === "string";
}

function isHealth(v: unknown): v is { status: string } {
  const d = v as { status: string };
  return !!d && typeof d.status === "string";
}

export class ForgelabClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    try {
      return await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceError("offline", `service unreachable: ${String(err)}`);
    }
  }

  /** GET /health; resolves true iff the service reports {"status":"ok"}. */
  async health(): Promise<boolean> {
    const resp = await this.request("/health");
    if (!resp.ok) throw await errorFromResponse(resp);
    const doc = await parseJson(resp, isHealth);
    return doc.status === "ok";
  }

  /** POST /analyze with a multipart image upload. */
  async analyze(file: Blob, sessionId: string): Promise<AnalyzeResult> {
    if (file.size > MAX_UPLOAD_BYTES) {
      throw new ServiceError("bad-request", "image exceeds the 5 MB upload limit");
    }
    const form = new FormData();
    form.append("file", file, "upload.png");
    const query = sessionId ? `?session_id=${encodeURIComponent(sessionId)}` : "";
    const resp = await this.request(`/analyze${query}`, {
      method: "POST",
      body: form,
    });
    if (!resp.ok) throw await errorFromResponse(resp);
    return parseJson(resp, isAnalyzeResult);
  }

  /** POST /chat for one dialogue turn in an existing session. */
  async chat(sessionId: string, message: string): Promise<string> {
    const resp = await this.request("/chat", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, message }),
    });
    if (!resp.ok) throw await errorFromResponse(resp);
    const doc = await parseJson(resp, isChatReply);
    return doc.reply;
  }
}
