/** Save/navigation flows gluing the editor store to the API client.
 * Kept DOM-free so the conflict and no-op-save contracts are unit-testable. */

import type { ApiClient } from "./api.js";
import type { EditorStore } from "./state.js";
import type { AnnotationRecord } from "./types.js";

export type SaveFlowResult =
  | { status: "clean" }
  | { status: "saved"; version: number }
  | { status: "conflict"; server: AnnotationRecord }
  | { status: "invalid"; error: string };

export class AnnotatorController {
  constructor(
    readonly store: EditorStore,
    readonly api: ApiClient,
  ) {}

  async load(imageId: string): Promise<AnnotationRecord> {
    const record = await this.api.getRecord(imageId);
    this.store.loadRecord(record);
    return record;
  }

  /** PUT the local record. Never touches the network when nothing changed. */
  async save(): Promise<SaveFlowResult> {
    const record = this.store.record;
    if (!record || !this.store.dirty) return { status: "clean" };
    const outcome = await this.api.putRecord(record, this.store.expectedVersion);
    if (outcome.status === "ok") {
      this.store.markSaved(outcome.version);
      return { status: "saved", version: outcome.version };
    }
    if (outcome.status === "conflict") {
      const server = await this.api.getRecord(record.image_id);
      return { status: "conflict", server };
    }
    return { status: "invalid", error: outcome.error };
  }

  /** Resolve a conflict: retry with the server's version, or adopt its copy. */
  async resolveConflict(choice: "keep-mine" | "take-server", server: AnnotationRecord): Promise<SaveFlowResult> {
    if (choice === "take-server") {
      this.store.applyServerRecord(server);
      return { status: "saved", version: server.version };
    }
    this.store.expectedVersion = server.version;
    return this.save();
  }
}
