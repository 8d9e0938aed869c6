// HTTP surface: one route per capability, stateless per request.
//
// Status mapping follows the engine's client: 400 with a "protocol" error
// for bodies that fail validation (never retried), 404 "remote" for
// unknown image refs, 500 "remote" for provider faults (retried).

import express, { Express, NextFunction, Request, Response } from "express";
import { ZodTypeAny, z } from "zod";
import { SceneModels, UnknownImageError } from "./provider.js";
import {
  AttentionRequest,
  CaptionRequest,
  CompleteRequest,
  EmbedRequest,
  ROUTES,
  TextOnImageRequest,
  errorBody,
  validationMessage,
} from "./wire.js";

export function createApp(models: SceneModels): Express {
  const app = express();
  app.use(express.json({ limit: "16mb" }));

  // Doubles as the readiness probe: a 200 here means scenes are loaded
  // and the reported grid is the one every later response is shaped by.
  app.get(ROUTES.describe, (_req, res) => {
    res.json(models.describe());
  });

  const post = <S extends ZodTypeAny>(
    route: string,
    what: string,
    schema: S,
    handler: (body: z.infer<S>) => unknown,
  ) => {
    app.post(route, (req, res) => {
      const parsed = schema.safeParse(req.body);
      if (!parsed.success) {
        res.status(400).json(errorBody("protocol", validationMessage(what, parsed.error)));
        return;
      }
      try {
        res.json(handler(parsed.data));
      } catch (err) {
        if (err instanceof UnknownImageError) {
          res.status(404).json(errorBody("remote", err.message));
        } else {
          const message = err instanceof Error ? err.message : String(err);
          res.status(500).json(errorBody("remote", `${what}: ${message}`));
        }
      }
    });
  };

  post(ROUTES.complete, "complete request", CompleteRequest, (body) => ({
    text: models.complete(body),
  }));
  post(ROUTES.attention, "attention request", AttentionRequest, (body) =>
    models.attention(body.image_ref, body.text, body.layer),
  );
  post(ROUTES.caption, "caption request", CaptionRequest, (body) => ({
    caption: models.caption(body.image_ref, body.patch_indices, body.rng_token),
  }));
  post(ROUTES.itc, "itc request", TextOnImageRequest, (body) => ({
    score: models.itc(body.image_ref, body.text),
  }));
  post(ROUTES.detect, "detect request", TextOnImageRequest, (body) => ({
    detections: models.detect(body.image_ref, body.text),
  }));
  post(ROUTES.embed, "embed request", EmbedRequest, (body) => ({
    embedding: models.embed(body.text),
  }));

  app.use((req, res) => {
    res.status(404).json(errorBody("protocol", `no such route: ${req.method} ${req.path}`));
  });

  // express.json() forwards malformed bodies here as SyntaxError
  app.use((err: Error, _req: Request, res: Response, _next: NextFunction) => {
    if (err instanceof SyntaxError) {
      res.status(400).json(errorBody("protocol", "request body is not valid JSON"));
    } else {
      res.status(500).json(errorBody("remote", err.message));
    }
  });

  return app;
}
