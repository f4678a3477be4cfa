/**
 * Entry point: texsr-sidecar --listen host:port | --stdio
 *                            [--model reference|plugin.js] [--max-side 2048]
 */
import { mountModel } from "./model.js";
import { serveStdio, serveTcp } from "./server.js";

interface Args {
  listen?: string;
  stdio: boolean;
  model: string;
  maxSide: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { stdio: false, model: "reference", maxSide: 2048 };
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--listen") {
      args.listen = argv[++i];
    } else if (a === "--stdio") {
      args.stdio = true;
    } else if (a === "--model") {
      args.model = argv[++i];
    } else if (a === "--max-side") {
      args.maxSide = parseInt(argv[++i], 10);
    } else if (a === "--help" || a === "-h") {
      console.log("usage: texsr-sidecar --listen host:port | --stdio "
        + "[--model reference|plugin.js] [--max-side 2048]");
      process.exit(0);
    } else {
      console.error(`unknown argument: ${a}`);
      process.exit(2);
    }
  }
  if (!args.stdio && !args.listen) {
    console.error("one of --listen or --stdio is required");
    process.exit(2);
  }
  if (!Number.isInteger(args.maxSide) || args.maxSide < 16) {
    console.error("--max-side must be an integer >= 16");
    process.exit(2);
  }
  return args;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  let model;
  try {
    model = await mountModel(args.model);
  } catch (err) {
    console.error(String((err as Error).message));
    process.exit(3);
  }
  const config = { model, maxSide: args.maxSide };
  if (args.stdio) {
    serveStdio(config);
    return;
  }
  const [host, portStr] = splitHostPort(args.listen!);
  await serveTcp(config, host, parseInt(portStr, 10));
}

function splitHostPort(spec: string): [string, string] {
  const idx = spec.lastIndexOf(":");
  if (idx <= 0) {
    console.error(`--listen needs host:port, got ${spec}`);
    process.exit(2);
  }
  return [spec.slice(0, idx), spec.slice(idx + 1)];
}

main().catch((err) => {
  console.error(String(err));
  process.exit(1);
});
