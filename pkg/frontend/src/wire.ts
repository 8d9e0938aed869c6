// Request/response vocabulary for the backend wire protocol.
//
// Field names and shapes must match protocol.md in the repo root exactly;
// the engine's HTTP client decodes these bodies with no tolerance for
// missing or mistyped fields. Matrices are row-major nested arrays.

import { z } from "zod";

export const ROUTES = {
  describe: "/v1/describe",
  complete: "/v1/complete",
  attention: "/v1/attention",
  caption: "/v1/caption",
  itc: "/v1/itc",
  detect: "/v1/detect",
  embed: "/v1/embed",
} as const;

export const CompleteRequest = z.object({
  prompt: z.string(),
  max_tokens: z.number().int(),
  temperature: z.number(),
  stop: z.array(z.string()).nullish(),
  logit_bias: z.record(z.string(), z.number()).nullish(),
});
export type CompleteRequest = z.infer<typeof CompleteRequest>;

export const AttentionRequest = z.object({
  image_ref: z.string(),
  text: z.string(),
  layer: z.number().int(),
});
export type AttentionRequest = z.infer<typeof AttentionRequest>;

export const CaptionRequest = z.object({
  image_ref: z.string(),
  patch_indices: z.array(z.number().int().nonnegative()),
  rng_token: z.number().int(),
});
export type CaptionRequest = z.infer<typeof CaptionRequest>;

export const TextOnImageRequest = z.object({
  image_ref: z.string(),
  text: z.string(),
});
export type TextOnImageRequest = z.infer<typeof TextOnImageRequest>;

export const EmbedRequest = z.object({
  text: z.string(),
});
export type EmbedRequest = z.infer<typeof EmbedRequest>;

export interface BackendInfo {
  grid_h: number;
  grid_w: number;
  embed_dim: number;
  special_token_positions: number[];
  model: string;
}

export interface AttentionResponse {
  attention: number[][];
  gradient: number[][];
  tokens: string[];
}

export interface Detection {
  label: string;
  box: [number, number, number, number];
  score: number;
}

export type ErrorKind = "protocol" | "remote";

export function errorBody(kind: ErrorKind, message: string) {
  return { error: { type: kind, message } };
}

export function validationMessage(what: string, error: z.ZodError): string {
  const issue = error.issues[0];
  const where = issue.path.length ? ` field ${issue.path.join(".")}:` : ":";
  return `${what}${where} ${issue.message}`;
}
