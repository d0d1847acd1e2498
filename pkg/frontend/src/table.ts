/**
 * Toy table backend: serves logits verbatim from a JSON lookup file.
 *
 * Table format: {"protocol_version": 1, "vocab_size": V, "entries":
 * [{"modality", "context", "logits"}, ...]}. Entries are keyed by
 * (modality, context); visual_ref is accepted but ignored, matching the
 * in-process table source it mirrors.
 */
import { readFileSync } from "node:fs";
import { z } from "zod";
import type { Modality } from "./protocol.js";
import type { Backend } from "./adapter.js";
import { BackendError } from "./adapter.js";

const tableFile = z.object({
  protocol_version: z.literal(1),
  vocab_size: z.number().int().positive(),
  entries: z.array(
    z.object({
      modality: z.enum(["multimodal", "text_only"]),
      context: z.array(z.number().int().nonnegative()),
      logits: z.array(z.number()),
    })
  ),
});

function key(modality: string, context: number[]): string {
  return `${modality}|${context.join(",")}`;
}

export class TableBackend implements Backend {
  readonly vocabSize: number;
  readonly modelId: string;
  private entries = new Map<string, number[]>();

  constructor(doc: unknown, modelId = "toy") {
    const parsed = tableFile.parse(doc);
    this.vocabSize = parsed.vocab_size;
    this.modelId = modelId;
    for (const e of parsed.entries) {
      if (e.logits.length !== parsed.vocab_size) {
        throw new Error(
          `table entry for (${e.modality}, [${e.context}]) has ${e.logits.length} logits, expected ${parsed.vocab_size}`
        );
      }
      this.entries.set(key(e.modality, e.context), e.logits);
    }
  }

  logits(modality: Modality, context: number[], _visualRef?: string): number[] {
    const hit = this.entries.get(key(modality, context));
    if (hit === undefined) {
      throw new BackendError(`no table entry for (${modality}, [${context.join(", ")}])`);
    }
    return hit;
  }
}

export function loadTable(path: string, modelId = "toy"): TableBackend {
  return new TableBackend(JSON.parse(readFileSync(path, "utf8")), modelId);
}
