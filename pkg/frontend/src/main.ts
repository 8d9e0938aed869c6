// Entry point: load scenes, bind the port, serve until signalled.

import { parseArgs } from "node:util";
import { existsSync } from "node:fs";
import { fileURLToPath } from "node:url";
import type { AddressInfo } from "node:net";
import { createApp } from "./app.js";
import { SceneModels } from "./provider.js";
import { loadScenes } from "./scenes.js";

const DEFAULT_SCENES = fileURLToPath(
  new URL("../../tests/goldens/protocol/scenes.json", import.meta.url),
);

function usage(): never {
  console.error(
    "usage: node dist/main.js [--port N] [--host ADDR] [--scenes scenes.json]",
  );
  process.exit(2);
}

let values: { port?: string; host?: string; scenes?: string };
try {
  values = parseArgs({
    options: {
      port: { type: "string", short: "p" },
      host: { type: "string" },
      scenes: { type: "string" },
    },
  }).values;
} catch {
  usage();
}

const port = Number(values.port ?? process.env.PORT ?? 8400);
if (!Number.isInteger(port) || port < 0 || port > 65535) usage();
const host = values.host ?? "127.0.0.1";

const scenesPath = values.scenes ?? DEFAULT_SCENES;
if (!existsSync(scenesPath)) {
  console.error(`scenes file not found: ${scenesPath}`);
  process.exit(2);
}

const models = new SceneModels(loadScenes(scenesPath));
const app = createApp(models);

const server = app.listen(port, host, () => {
  const addr = server.address() as AddressInfo;
  console.log(`serving ${models.describe().model} on http://${host}:${addr.port}`);
  console.log(`scenes: ${scenesPath}`);
});

const shutdown = () => {
  server.close(() => process.exit(0));
};
process.on("SIGINT", shutdown);
process.on("SIGTERM", shutdown);
