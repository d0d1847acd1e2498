/**
 * Logit-bridge wire protocol, version 1.
 *
 * Newline-delimited JSON, strictly request-response: the client sends one
 * request per line and waits for exactly one response echoing its
 * request_id. Logits ride as full dense arrays of doubles; JSON's shortest
 * round-trip float encoding keeps them bit-exact in both directions.
 */
import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const MODALITIES = ["multimodal", "text_only"] as const;
export type Modality = (typeof MODALITIES)[number];

const helloRequest = z.object({
  request_id: z.number().int().positive(),
  kind: z.literal("hello"),
  protocol_version: z.number().int(),
});

const logitsRequest = z.object({
  request_id: z.number().int().positive(),
  kind: z.literal("logits"),
  modality: z.enum(MODALITIES),
  context_tokens: z.array(z.number().int().nonnegative()).min(1),
  visual_ref: z.string().optional(),
});

const shutdownRequest = z.object({
  request_id: z.number().int().positive(),
  kind: z.literal("shutdown"),
});

export const requestSchema = z.discriminatedUnion("kind", [
  helloRequest,
  logitsRequest,
  shutdownRequest,
]);

export type HelloRequest = z.infer<typeof helloRequest>;
export type LogitsRequest = z.infer<typeof logitsRequest>;
export type ShutdownRequest = z.infer<typeof shutdownRequest>;
export type BridgeRequest = z.infer<typeof requestSchema>;

export interface HelloAck {
  request_id: number;
  kind: "hello_ack";
  vocab_size: number;
  model_id: string;
}

export interface LogitsResponse {
  request_id: number;
  kind: "logits";
  logits: number[];
}

export interface ErrorResponse {
  request_id: number;
  kind: "error";
  error_message: string;
}

export type BridgeResponse = HelloAck | LogitsResponse | ErrorResponse;

export type ParseOutcome =
  | { ok: true; request: BridgeRequest }
  | { ok: false; error: string };

/** Parse one request line; malformed input becomes a recoverable error. */
export function parseRequestLine(line: string): ParseOutcome {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (e) {
    return { ok: false, error: `malformed request line: ${(e as Error).message}` };
  }
  const parsed = requestSchema.safeParse(raw);
  if (!parsed.success) {
    return { ok: false, error: `invalid request: ${parsed.error.issues[0]?.message}` };
  }
  if (parsed.data.kind === "hello" && parsed.data.protocol_version !== PROTOCOL_VERSION) {
    return {
      ok: false,
      error: `unsupported protocol_version ${parsed.data.protocol_version}`,
    };
  }
  return { ok: true, request: parsed.data };
}

export function encodeResponse(resp: BridgeResponse): string {
  return JSON.stringify(resp);
}
