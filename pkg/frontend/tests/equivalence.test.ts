/** Criterion: flows authored through the UI's arrow tools, synthesized by the
 * server, are byte-identical to the CLI `flow` output for the same abstract
 * spec. Boots the real Python service and CLI. */
import { execFile, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { arrowsToFlowSpec } from "../src/arrows";
import { Arrow, DEFAULT_SETTINGS } from "../src/types";

const execFileP = promisify(execFile);
const PORT = 8377;
const BASE = `http://127.0.0.1:${PORT}`;
const at = (x: number, y: number) => ({ x, y });

let server: ChildProcess;
let workDir: string;

async function waitReady(timeoutMs = 60000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/api/images/probe`);
      if (r.status === 404) return;
    } catch {
      /* not up yet */
    }
    await new Promise((res) => setTimeout(res, 250));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "motionedit-ui-"));
  server = spawn(
    "python3",
    ["-m", "motionedit.cli", "serve", "--port", String(PORT), "--data-dir", join(workDir, "data")],
    { stdio: "ignore" }
  );
  await waitReady();
}, 90000);

afterAll(() => {
  server?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

const r = DEFAULT_SETTINGS.unityRadius;
const TOOL_ARROWS: Record<string, Arrow[]> = {
  translation: [
    {
      tool: "translation",
      anchor: at(10, 12),
      dragStart: at(10, 12),
      dragEnd: at(30, 12),
      maskRect: [4, 4, 20, 20],
    },
  ],
  rotation: [
    { tool: "rotation", anchor: at(32, 32), dragStart: at(44, 32), dragEnd: at(44, 26) },
  ],
  stretch: [
    { tool: "stretch", anchor: at(32, 32), dragStart: at(32, 32), dragEnd: at(32 + r / 2, 32) },
  ],
  scale: [
    { tool: "scale", anchor: at(20, 20), dragStart: at(20, 20), dragEnd: at(20, 20 + r * 1.5) },
  ],
  interpolated: [
    { tool: "interpolated", anchor: at(8, 30), dragStart: at(8, 30), dragEnd: at(8, 36) },
    { tool: "interpolated", anchor: at(50, 30), dragStart: at(50, 30), dragEnd: at(50, 18) },
  ],
};

describe("UI/CLI flow equivalence", () => {
  for (const [tool, arrows] of Object.entries(TOOL_ARROWS)) {
    it(`${tool} arrow yields byte-identical .flo from server and CLI`, async () => {
      const spec = arrowsToFlowSpec(arrows, [64, 64]);
      expect(spec.primitives.length).toBeGreaterThan(0);

      const resp = await fetch(`${BASE}/api/flows/synthesize`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(spec),
      });
      expect(resp.status).toBe(200);
      const { flow_id } = (await resp.json()) as { flow_id: string };
      const served = Buffer.from(
        await (await fetch(`${BASE}/api/flows/${flow_id}`)).arrayBuffer()
      );

      const specPath = join(workDir, `${tool}.json`);
      const floPath = join(workDir, `${tool}.flo`);
      writeFileSync(specPath, JSON.stringify(spec));
      await execFileP("python3", [
        "-m", "motionedit.cli", "flow", "--spec", specPath, "--out", floPath,
      ]);
      const cli = readFileSync(floPath);
      expect(served.equals(cli)).toBe(true);
    }, 30000);
  }

  it("zero arrows produce a zero flow", async () => {
    const spec = arrowsToFlowSpec([], [16, 16]);
    const resp = await fetch(`${BASE}/api/flows/synthesize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(spec),
    });
    const { flow_id } = (await resp.json()) as { flow_id: string };
    const bytes = Buffer.from(
      await (await fetch(`${BASE}/api/flows/${flow_id}`)).arrayBuffer()
    );
    // .flo layout: magic + W + H then float32 data, all zero here
    const data = new Float32Array(bytes.buffer, bytes.byteOffset + 12, 16 * 16 * 2);
    expect(Math.max(...Array.from(data).map(Math.abs))).toBe(0);
  }, 30000);
});
