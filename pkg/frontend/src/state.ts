/** Editor state with undo/redo and divergence-based dirty tracking.
 *
 * All mutations go through this store so that: the selection always points
 * at a real region or nothing, every action is undoable (last 50), and the
 * dirty flag is true exactly when the local record differs from the last
 * fetched or saved server copy.
 */

import { isDegenerate, type HandleName, moveBox, resizeBox } from "./geometry.js";
import { cloneRecord, contentKey, type AnnotationRecord, type NormalizedBox } from "./types.js";

export const UNDO_DEPTH = 50;
export const PLACEHOLDER_PHRASE = "object";

export type ActionResult = { ok: true } | { ok: false; hint: string };

interface Snapshot {
  record: AnnotationRecord;
  selection: number | null;
}

export class EditorStore {
  imageId: string | null = null;
  record: AnnotationRecord | null = null;
  selection: number | null = null;
  expectedVersion = 0;

  private baselineKey = "";
  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];

  get dirty(): boolean {
    return this.record !== null && contentKey(this.record) !== this.baselineKey;
  }

  /** Replace everything with a freshly fetched server record. */
  loadRecord(record: AnnotationRecord): void {
    this.imageId = record.image_id;
    this.record = cloneRecord(record);
    this.selection = null;
    this.expectedVersion = record.version;
    this.baselineKey = contentKey(record);
    this.undoStack = [];
    this.redoStack = [];
  }

  /** Adopt the server's copy after a conflict ("take server"). */
  applyServerRecord(record: AnnotationRecord): void {
    this.loadRecord(record);
  }

  /** The local copy was accepted; reset the baseline to it. */
  markSaved(newVersion: number): void {
    if (!this.record) return;
    this.record.version = newVersion;
    this.expectedVersion = newVersion;
    this.baselineKey = contentKey(this.record);
  }

  select(index: number | null): void {
    if (index === null || (this.record && index >= 0 && index < this.record.regions.length)) {
      this.selection = index;
    }
  }

  selectedBox(): NormalizedBox | null {
    if (this.record === null || this.selection === null) return null;
    return this.record.regions[this.selection].box;
  }

  private snapshot(): void {
    if (!this.record) return;
    this.undoStack.push({ record: cloneRecord(this.record), selection: this.selection });
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
    this.redoStack = [];
  }

  undo(): boolean {
    if (!this.record || this.undoStack.length === 0) return false;
    this.redoStack.push({ record: cloneRecord(this.record), selection: this.selection });
    const prior = this.undoStack.pop()!;
    this.record = prior.record;
    this.selection = prior.selection;
    return true;
  }

  redo(): boolean {
    if (!this.record || this.redoStack.length === 0) return false;
    this.undoStack.push({ record: cloneRecord(this.record), selection: this.selection });
    const next = this.redoStack.pop()!;
    this.record = next.record;
    this.selection = next.selection;
    return true;
  }

  createRegion(box: NormalizedBox, phrase: string = PLACEHOLDER_PHRASE): ActionResult {
    if (!this.record) return { ok: false, hint: "no image loaded" };
    if (isDegenerate(box)) {
      return { ok: false, hint: "box too small; drag a larger rectangle" };
    }
    this.snapshot();
    this.record.regions.push({ box: { ...box }, phrase, confidence: null });
    this.selection = this.record.regions.length - 1;
    return { ok: true };
  }

  moveSelected(dx: number, dy: number): ActionResult {
    if (!this.record || this.selection === null) return { ok: false, hint: "nothing selected" };
    this.snapshot();
    const region = this.record.regions[this.selection];
    region.box = moveBox(region.box, dx, dy);
    return { ok: true };
  }

  resizeSelected(handle: HandleName, x: number, y: number): ActionResult {
    if (!this.record || this.selection === null) return { ok: false, hint: "nothing selected" };
    this.snapshot();
    const region = this.record.regions[this.selection];
    region.box = resizeBox(region.box, handle, x, y);
    return { ok: true };
  }

  /** Replace the selected region's box wholesale (end of a canvas gesture). */
  setSelectedBox(box: NormalizedBox): ActionResult {
    if (!this.record || this.selection === null) return { ok: false, hint: "nothing selected" };
    if (isDegenerate(box)) return { ok: false, hint: "box too small" };
    this.snapshot();
    this.record.regions[this.selection].box = { ...box };
    return { ok: true };
  }

  deleteSelected(): ActionResult {
    if (!this.record || this.selection === null) return { ok: false, hint: "nothing selected" };
    this.snapshot();
    this.record.regions.splice(this.selection, 1);
    this.selection = null;
    return { ok: true };
  }

  /** Clone the selected box verbatim so a second phrase can name the same
   * object ("travelers" / "porters" style annotations). Selects the clone. */
  duplicateSelected(phrase: string = PLACEHOLDER_PHRASE): ActionResult {
    if (!this.record || this.selection === null) return { ok: false, hint: "nothing selected" };
    this.snapshot();
    const source = this.record.regions[this.selection];
    this.record.regions.push({ box: { ...source.box }, phrase, confidence: source.confidence });
    this.selection = this.record.regions.length - 1;
    return { ok: true };
  }

  setPhrase(index: number, phrase: string): ActionResult {
    if (!this.record || index < 0 || index >= this.record.regions.length) {
      return { ok: false, hint: "no such region" };
    }
    if (!phrase.trim()) return { ok: false, hint: "phrase cannot be empty" };
    this.snapshot();
    this.record.regions[index].phrase = phrase;
    return { ok: true };
  }

  setSelectedPhrase(phrase: string): ActionResult {
    if (this.selection === null) return { ok: false, hint: "nothing selected" };
    return this.setPhrase(this.selection, phrase);
  }

  setCaption(caption: string): ActionResult {
    if (!this.record) return { ok: false, hint: "no image loaded" };
    this.snapshot();
    this.record.caption = caption;
    return { ok: true };
  }
}
