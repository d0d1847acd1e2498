/**
 * Adapter request loop: one backend, one line-delimited stream pair.
 *
 * The loop is strictly sequential (single-threaded request-response) and
 * always answers exactly one line per request line. Malformed lines get an
 * error response with request_id 0 and the connection stays up; a shutdown
 * request ends the loop.
 */
import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";
import {
  BridgeResponse,
  LogitsRequest,
  encodeResponse,
  parseRequestLine,
} from "./protocol.js";
import type { Modality } from "./protocol.js";

/** Raised by a backend when a query cannot be answered; maps to an error
 * response, never a dropped connection. */
export class BackendError extends Error {}

export interface Backend {
  readonly vocabSize: number;
  readonly modelId: string;
  logits(modality: Modality, context: number[], visualRef?: string): number[];
}

export interface AdapterConfig {
  modelId: string;
  /** visual_ref -> image file path; queries referencing unknown refs fail
   * with an error response. Empty map disables the check (toy backend). */
  imagePathByRef: Record<string, string>;
  /** Prompt template with {question} and {image} slots. The adapter, not
   * the engine, owns templating; the toy backend ignores it. */
  promptTemplate: string;
}

export function defaultConfig(modelId: string): AdapterConfig {
  return {
    modelId,
    imagePathByRef: {},
    promptTemplate: "{image} {question}",
  };
}

function handleLogits(
  req: LogitsRequest,
  backend: Backend,
  config: AdapterConfig
): BridgeResponse {
  if (
    req.modality === "multimodal" &&
    Object.keys(config.imagePathByRef).length > 0 &&
    (req.visual_ref === undefined || !(req.visual_ref in config.imagePathByRef))
  ) {
    return {
      request_id: req.request_id,
      kind: "error",
      error_message: `unknown visual_ref ${JSON.stringify(req.visual_ref)}`,
    };
  }
  let logits: number[];
  try {
    logits = backend.logits(req.modality, req.context_tokens, req.visual_ref);
  } catch (e) {
    if (e instanceof BackendError) {
      return { request_id: req.request_id, kind: "error", error_message: e.message };
    }
    throw e;
  }
  if (logits.length !== backend.vocabSize) {
    return {
      request_id: req.request_id,
      kind: "error",
      error_message: `backend returned ${logits.length} logits, expected ${backend.vocabSize}`,
    };
  }
  // the wire contract forbids NaN/inf outright
  if (!logits.every(Number.isFinite)) {
    return {
      request_id: req.request_id,
      kind: "error",
      error_message: "backend produced non-finite logits",
    };
  }
  return { request_id: req.request_id, kind: "logits", logits };
}

export function handleLine(
  line: string,
  backend: Backend,
  config: AdapterConfig
): { response: BridgeResponse | null; shutdown: boolean } {
  const outcome = parseRequestLine(line);
  if (!outcome.ok) {
    return {
      response: { request_id: 0, kind: "error", error_message: outcome.error },
      shutdown: false,
    };
  }
  const req = outcome.request;
  switch (req.kind) {
    case "hello":
      return {
        response: {
          request_id: req.request_id,
          kind: "hello_ack",
          vocab_size: backend.vocabSize,
          model_id: config.modelId,
        },
        shutdown: false,
      };
    case "shutdown":
      // shutdown is fire-and-forget: the client closes without reading
      return { response: null, shutdown: true };
    case "logits":
      return { response: handleLogits(req, backend, config), shutdown: false };
  }
}

/** Run the request loop until shutdown or end of input. */
export function serve(
  input: Readable,
  output: Writable,
  backend: Backend,
  config: AdapterConfig
): Promise<void> {
  return new Promise((resolve) => {
    const lines = createInterface({ input, crlfDelay: Infinity });
    lines.on("line", (line) => {
      if (line.trim() === "") return;
      const { response, shutdown } = handleLine(line, backend, config);
      if (response !== null) {
        output.write(encodeResponse(response) + "\n");
      }
      if (shutdown) {
        lines.close();
        resolve();
      }
    });
    lines.on("close", () => resolve());
  });
}
