#!/usr/bin/env node
/**
 * adapter --model <id> --images <manifest> [--toy <table>] [--tcp <addr>]
 *
 * Speaks the logit-bridge protocol on stdio by default, or listens on a TCP
 * address with --tcp host:port. The only backend shipped here is the
 * dependency-free table backend (--toy); wiring a real vision-language
 * model means implementing the Backend interface and registering it below.
 */
import { readFileSync } from "node:fs";
import { createServer } from "node:net";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { AdapterConfig, Backend, defaultConfig, serve } from "./adapter.js";
import { loadTable } from "./table.js";

interface Args {
  model: string;
  images?: string;
  toy?: string;
  tcp?: string;
}

function buildBackend(args: Args): { backend: Backend; config: AdapterConfig } {
  const config = defaultConfig(args.model);
  if (args.images !== undefined) {
    config.imagePathByRef = JSON.parse(readFileSync(args.images, "utf8"));
  }
  if (args.toy !== undefined) {
    return { backend: loadTable(args.toy, args.model), config };
  }
  throw new Error(
    `no backend for model ${JSON.stringify(args.model)}: only the --toy table backend ships with this package`
  );
}

async function serveTcp(address: string, backend: Backend, config: AdapterConfig) {
  const sep = address.lastIndexOf(":");
  const host = address.slice(0, sep) || "127.0.0.1";
  const port = Number(address.slice(sep + 1));
  const server = createServer((socket) => {
    void serve(socket, socket, backend, config).then(() => socket.end());
  });
  await new Promise<void>((resolve) => server.listen(port, host, resolve));
  process.stderr.write(`listening on ${host}:${port}\n`);
}

async function main() {
  const args = (await yargs(hideBin(process.argv))
    .option("model", { type: "string", demandOption: true })
    .option("images", { type: "string", describe: "JSON manifest: visual_ref -> image path" })
    .option("toy", { type: "string", describe: "serve logits from this table file" })
    .option("tcp", { type: "string", describe: "listen on host:port instead of stdio" })
    .strict()
    .parse()) as Args;

  const { backend, config } = buildBackend(args);
  if (args.tcp !== undefined) {
    await serveTcp(args.tcp, backend, config);
    return;
  }
  await serve(process.stdin, process.stdout, backend, config);
}

main().catch((e: Error) => {
  process.stderr.write(`adapter: ${e.message}\n`);
  process.exit(2);
});
