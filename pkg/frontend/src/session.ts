/** Annotation session logic, kept out of the DOM so the invariants are
 * directly testable: at most one locked sample at a time (release before
 * fetch), submit only after the audio has been played, discard needs at
 * least one reason or explanatory feedback, and every decision is exactly
 * one service call. */

import { ApiError, ForgeApi, SampleRecord } from "./api.js";

export type SessionPhase = "idle" | "loading" | "annotating" | "empty";

export const DISCARD_REASONS = [
  "repetition",
  "bad_prosody",
  "text_audio_inconsistency",
  "mispronunciation",
  "truncation",
  "sound_artifact",
  "other",
] as const;

type SessionApi = Pick<ForgeApi, "nextSample" | "submitAnnotation" | "releaseSample">;

export interface DiscardRequest {
  reasons: string[];
  feedback?: string;
}

/** Maps UI input to a service-valid discard body, or null if not valid yet.
 * Feedback without a ticked reason becomes reason "other"; reason "other"
 * without feedback is incomplete. */
export function normalizeDiscard(reasons: string[], feedback: string): DiscardRequest | null {
  const ticked = reasons.filter((r) => (DISCARD_REASONS as readonly string[]).includes(r));
  const note = feedback.trim();
  if (ticked.length === 0 && note) {
    return { reasons: ["other"], feedback: note };
  }
  if (ticked.length === 0) {
    return null;
  }
  if (ticked.includes("other") && !note) {
    return null;
  }
  return { reasons: ticked, feedback: note || undefined };
}

export class AnnotationSession {
  phase: SessionPhase = "idle";
  sample: SampleRecord | null = null;
  hasPlayed = false;
  notice = "";

  constructor(
    private api: SessionApi,
    private datasetId: string,
  ) {}

  /** Fetches the next sample, releasing any currently held lock first. */
  async fetchNext(): Promise<SampleRecord | null> {
    await this.releaseCurrent();
    this.phase = "loading";
    const sample = await this.api.nextSample(this.datasetId);
    if (sample === null) {
      this.phase = "empty";
      this.sample = null;
      return null;
    }
    this.sample = sample;
    this.hasPlayed = false;
    this.phase = "annotating";
    return sample;
  }

  markPlayed(): void {
    if (this.phase === "annotating") {
      this.hasPlayed = true;
    }
  }

  canApprove(): boolean {
    return this.phase === "annotating" && this.hasPlayed;
  }

  canDiscard(reasons: string[], feedback: string): boolean {
    return this.canApprove() && normalizeDiscard(reasons, feedback) !== null;
  }

  leaseRemainingS(nowEpochS: number = Date.now() / 1000): number {
    if (this.sample?.lock_expiry == null) {
      return 0;
    }
    return Math.max(0, this.sample.lock_expiry - nowEpochS);
  }

  /** Approve with the edited text; exactly one service call per decision. */
  async approve(finalText: string): Promise<void> {
    if (!this.canApprove() || !this.sample) {
      throw new Error("approve is not available before the audio was played");
    }
    await this.submit({ action: "approve", final_text: finalText });
  }

  async discard(reasons: string[], feedback: string): Promise<void> {
    if (!this.canApprove() || !this.sample) {
      throw new Error("discard is not available before the audio was played");
    }
    const body = normalizeDiscard(reasons, feedback);
    if (body === null) {
      throw new Error("discard needs at least one reason or feedback");
    }
    await this.submit({ action: "discard", reasons: body.reasons, feedback: body.feedback });
  }

  private async submit(body: Parameters<SessionApi["submitAnnotation"]>[1]): Promise<void> {
    const sample = this.sample!;
    try {
      await this.api.submitAnnotation(sample.id, body);
      this.notice = "";
    } catch (error) {
      if (error instanceof ApiError && (error.status === 409 || error.status === 410)) {
        // sample taken or lease expired: surface and move on
        this.notice = "sample taken/expired — fetching next";
      } else {
        throw error;
      }
    } finally {
      this.sample = null;
      this.hasPlayed = false;
      this.phase = "idle";
    }
  }

  /** Releases the held lock (navigation away); never throws. */
  async releaseCurrent(): Promise<void> {
    const sample = this.sample;
    this.sample = null;
    this.hasPlayed = false;
    if (!sample) {
      return;
    }
    try {
      await this.api.releaseSample(sample.id);
    } catch {
      /* lock may have expired or been decided already */
    }
  }
}
