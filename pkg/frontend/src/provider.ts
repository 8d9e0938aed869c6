// Deterministic stand-in models computed from scene graphs.
//
// Each method implements one capability of the wire protocol. The math is
// the same as the engine's offline oracle: attention puts point masses on
// the grid cells of objects named in the text, captions cycle through
// (template, object) pairs keyed by rng_token, ITC is vocabulary overlap,
// embeddings are hashed bags of words. Swapping in real checkpoints means
// replacing this class and nothing else.

import {
  COLORS,
  SceneGraph,
  SceneObject,
  STOPWORDS,
  bagOfWords,
  singular,
  tokenize,
  vocabulary,
  wordsOf,
} from "./scenes.js";
import { AttentionResponse, BackendInfo, CompleteRequest, Detection } from "./wire.js";

export class UnknownImageError extends Error {}

interface CaptionParts {
  name: string;
  attrs: string;
  firstAttr: string;
  position: string;
  ref: string;
}

const CAPTION_TEMPLATES: Array<(p: CaptionParts) => string> = [
  (p) => `a ${p.attrs}${p.name} in image ${p.ref}`,
  (p) => `there is a ${p.attrs}${p.name} in image ${p.ref}`,
  (p) => `image ${p.ref} shows a ${p.attrs}${p.name}`,
  (p) => `a photo of a ${p.attrs}${p.name} in image ${p.ref}`,
  (p) => `you can see a ${p.attrs}${p.name} in image ${p.ref}`,
  (p) => `the ${p.name} in image ${p.ref} looks ${p.firstAttr}`,
  (p) => `a ${p.attrs}${p.name} near the ${p.position} of image ${p.ref}`,
  (p) => `the ${p.position} of image ${p.ref} has a ${p.attrs}${p.name}`,
];

function positionPhrase(cell: [number, number], grid: [number, number]): string {
  const [row, col] = cell;
  const [gridH, gridW] = grid;
  const vertical = ["top", "middle", "bottom"][Math.min(2, Math.floor((row * 3) / Math.max(1, gridH)))];
  const horizontal = ["left", "center", "right"][Math.min(2, Math.floor((col * 3) / Math.max(1, gridW)))];
  return `${vertical} ${horizontal}`;
}

const QUESTION_LINE = /^# Image(?: Set)? \d+: (.+)$/gm;
const QA_BLOCK = /Question: (.+)\nAnswer:/g;
const CAPTION_REF = /image ([A-Za-z0-9_.:-]+)/g;

function lastMatch(pattern: RegExp, text: string): string | null {
  let last: string | null = null;
  for (const m of text.matchAll(pattern)) last = m[1];
  return last;
}

const YESNO_STARTERS = new Set([
  "is", "are", "was", "were", "does", "do", "did", "can", "has", "have",
]);

export class SceneModels {
  private scenes = new Map<string, SceneGraph>();
  private info: BackendInfo;
  private grid: [number, number];

  constructor(
    scenes: SceneGraph[],
    grid: [number, number] = [24, 24],
    embedDim = 16,
    model = "scene-oracle",
  ) {
    this.grid = grid;
    const [gridH, gridW] = grid;
    for (const scene of scenes) {
      for (const obj of scene.objects) {
        const [row, col] = obj.grid_cell;
        if (row < 0 || row >= gridH || col < 0 || col >= gridW) {
          throw new Error(
            `scene ${scene.image_ref}: ${obj.name} cell [${row}, ${col}] outside ${gridH}x${gridW} grid`,
          );
        }
      }
      this.scenes.set(scene.image_ref, scene);
    }
    this.info = {
      grid_h: gridH,
      grid_w: gridW,
      embed_dim: embedDim,
      special_token_positions: [0, -1],
      model,
    };
  }

  private scene(imageRef: string): SceneGraph {
    const scene = this.scenes.get(imageRef);
    if (scene === undefined) throw new UnknownImageError(`unknown image '${imageRef}'`);
    return scene;
  }

  describe(): BackendInfo {
    return this.info;
  }

  attention(imageRef: string, text: string, _layer: number): AttentionResponse {
    const scene = this.scene(imageRef);
    const tokens = tokenize(text);
    const [gridH, gridW] = this.grid;
    const patches = gridH * gridW;
    const byName = new Map<string, SceneObject[]>();
    for (const obj of scene.objects) {
      const key = singular(obj.name.toLowerCase());
      const group = byName.get(key);
      if (group) group.push(obj);
      else byName.set(key, [obj]);
    }
    const attention = tokens.map((token) => {
      const row = new Array<number>(patches).fill(0);
      for (const obj of byName.get(singular(token.toLowerCase())) ?? []) {
        const [r, c] = obj.grid_cell;
        row[r * gridW + c] = 1;
      }
      return row;
    });
    const gradient = tokens.map(() => new Array<number>(patches).fill(1));
    return { attention, gradient, tokens };
  }

  caption(imageRef: string, _patchIndices: number[], rngToken: number): string {
    const scene = this.scene(imageRef);
    if (scene.objects.length === 0) return `an empty scene in image ${imageRef}`;
    const t = CAPTION_TEMPLATES.length;
    const template = CAPTION_TEMPLATES[rngToken % t];
    const obj = scene.objects[Math.floor(rngToken / t) % scene.objects.length];
    const attrs = obj.attributes.map((a) => a.toLowerCase()).join(" ");
    return template({
      name: obj.name.toLowerCase(),
      attrs: attrs ? attrs + " " : "",
      firstAttr: obj.attributes.length ? obj.attributes[0].toLowerCase() : "plain",
      position: positionPhrase(obj.grid_cell, this.grid),
      ref: imageRef,
    });
  }

  itc(imageRef: string, text: string): number {
    const scene = this.scene(imageRef);
    const tokens = wordsOf(text).filter((w) => !STOPWORDS.has(w)).map(singular);
    if (tokens.length === 0) return 0;
    const vocab = vocabulary(scene);
    const hits = tokens.filter((t) => vocab.has(t)).length;
    return hits / tokens.length;
  }

  detect(imageRef: string, text: string): Detection[] {
    const scene = this.scene(imageRef);
    const [gridH, gridW] = this.grid;
    const wanted = new Set(wordsOf(text).filter((w) => !STOPWORDS.has(w)).map(singular));
    const out: Detection[] = [];
    // boxes come back in the canonical 24-unit frame, bottom-origin
    for (const obj of scene.objects) {
      if (!wanted.has(singular(obj.name.toLowerCase()))) continue;
      const [row, col] = obj.grid_cell;
      const x0 = (col * 24) / gridW;
      const y0 = ((gridH - row - 1) * 24) / gridH;
      out.push({
        label: obj.name.toLowerCase(),
        box: [x0, y0, x0 + 24 / gridW, y0 + 24 / gridH],
        score: 1,
      });
    }
    return out;
  }

  embed(text: string): number[] {
    return bagOfWords(text, this.info.embed_dim);
  }

  // The completion stand-in covers the two prompt families the engine
  // sends: code prompts get a minimal query() program for the final
  // question line, QA prompts get a rule-based answer grounded in the
  // scenes named by the caption block. Anything else answers "unknown".
  complete(request: CompleteRequest): string {
    let text: string;
    const codeQuestion = lastMatch(QUESTION_LINE, request.prompt);
    if (codeQuestion !== null) {
      text = `img = open_image("Image1.jpg")\nanswer = query(img, ${JSON.stringify(codeQuestion)})\n`;
    } else {
      const qaQuestion = lastMatch(QA_BLOCK, request.prompt);
      text = qaQuestion !== null ? this.answerFromCaptions(request.prompt, qaQuestion) : "unknown";
    }
    for (const stop of request.stop ?? []) {
      const cut = text.indexOf(stop);
      if (cut >= 0) text = text.slice(0, cut);
    }
    return text;
  }

  private answerFromCaptions(prompt: string, question: string): string {
    const scenes: SceneGraph[] = [];
    const seen = new Set<string>();
    for (const m of prompt.matchAll(CAPTION_REF)) {
      const scene = this.scenes.get(m[1]);
      if (scene && !seen.has(m[1])) {
        seen.add(m[1]);
        scenes.push(scene);
      }
    }
    if (scenes.length === 0) return "unknown";
    const objects = scenes.flatMap((s) => s.objects);
    const q = question.toLowerCase();

    const color = q.match(/what color is the ([a-z0-9 ]+?)\??$/);
    if (color) {
      const target = singular(wordsOf(color[1]).at(-1) ?? "");
      for (const obj of objects) {
        if (singular(obj.name.toLowerCase()) !== target) continue;
        const hit = obj.attributes.find((a) => COLORS.has(a.toLowerCase()));
        return (hit ?? obj.attributes[0] ?? "unknown").toLowerCase();
      }
      return "unknown";
    }

    const count = q.match(/how many ([a-z0-9 ]+?)(?: are| can| do|\?|$)/);
    if (count) {
      const target = singular(wordsOf(count[1]).at(-1) ?? "");
      const n = objects.filter((o) => singular(o.name.toLowerCase()) === target).length;
      return String(n);
    }

    const first = wordsOf(q)[0];
    if (first !== undefined && YESNO_STARTERS.has(first)) {
      const vocab = new Set<string>();
      for (const scene of scenes) for (const v of vocabulary(scene)) vocab.add(v);
      const content = wordsOf(q).filter((w) => !STOPWORDS.has(w) && !YESNO_STARTERS.has(w));
      if (content.length === 0) return "no";
      return content.every((w) => vocab.has(singular(w)) || vocab.has(w)) ? "yes" : "no";
    }

    return "unknown";
  }
}
