// Scene-graph fixtures and the text helpers shared by every stand-in model.
//
// These mirror the offline oracle bundled with the engine, down to the
// tokenizer and the hash used for embeddings, so responses recorded from
// that oracle replay byte-for-byte against this server.

import { readFileSync } from "node:fs";
import { createHash } from "node:crypto";
import { z } from "zod";

const SceneObjectSchema = z.object({
  name: z.string(),
  attributes: z.array(z.string()).default([]),
  grid_cell: z.tuple([z.number().int(), z.number().int()]),
  relations: z.array(z.tuple([z.string(), z.number().int()])).default([]),
});

const SceneSchema = z.object({
  image_ref: z.string(),
  objects: z.array(SceneObjectSchema),
});

export type SceneObject = z.infer<typeof SceneObjectSchema>;
export type SceneGraph = z.infer<typeof SceneSchema>;

export function loadScenes(path: string): SceneGraph[] {
  const raw = JSON.parse(readFileSync(path, "utf8"));
  return z.array(SceneSchema).parse(raw);
}

const WORD = /[a-z0-9]+/g;

const IRREGULAR_SINGULAR: Record<string, string> = {
  men: "man",
  women: "woman",
  children: "child",
  people: "person",
  shelves: "shelf",
  knives: "knife",
};

export const STOPWORDS = new Set([
  "a", "an", "the", "is", "are", "there", "in", "on", "of", "any",
  "image", "images", "it", "that", "to", "and", "or", "look", "looks",
  "does", "do", "true", "visible",
]);

export const COLORS = new Set([
  "red", "blue", "green", "yellow", "black", "white", "brown", "pink",
  "orange", "purple", "gray", "grey", "silver", "gold", "beige", "tan",
]);

export function wordsOf(text: string): string[] {
  return text.toLowerCase().match(WORD) ?? [];
}

export function singular(word: string): string {
  const irregular = IRREGULAR_SINGULAR[word];
  if (irregular !== undefined) return irregular;
  if (word.endsWith("ies") && word.length > 4) return word.slice(0, -3) + "y";
  if (/(sses|xes|shes|ches)$/.test(word)) return word.slice(0, -2);
  if (word.endsWith("s") && !word.endsWith("ss") && word.length > 3) {
    return word.slice(0, -1);
  }
  return word;
}

export function tokenize(text: string): string[] {
  return ["[CLS]", ...wordsOf(text), "[SEP]"];
}

// Hash each word into a bucket and count. Matches the engine's offline
// embedding exactly (sha256, first 8 bytes big-endian, mod dim).
export function bagOfWords(text: string, dim: number): number[] {
  const vec = new Array<number>(dim).fill(0);
  for (const word of wordsOf(text)) {
    const digest = createHash("sha256").update(word, "utf8").digest();
    const index = Number(digest.readBigUInt64BE(0) % BigInt(dim));
    vec[index] += 1;
  }
  return vec;
}

export function vocabulary(scene: SceneGraph): Set<string> {
  const vocab = new Set<string>();
  for (const obj of scene.objects) {
    vocab.add(singular(obj.name.toLowerCase()));
    for (const attr of obj.attributes) vocab.add(attr.toLowerCase());
  }
  return vocab;
}
