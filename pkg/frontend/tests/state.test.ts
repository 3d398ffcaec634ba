import { beforeEach, describe, expect, it } from "vitest";

import { EditorStore, UNDO_DEPTH } from "../src/state.js";
import type { AnnotationRecord } from "../src/types.js";

function serverRecord(): AnnotationRecord {
  return {
    image_id: "img-1",
    caption: "two women, a boy.",
    version: 3,
    regions: [
      { box: { x0: 0.1, y0: 0.1, x1: 0.4, y1: 0.4 }, phrase: "boy", confidence: 0.4 },
      { box: { x0: 0.5, y0: 0.5, x1: 0.9, y1: 0.9 }, phrase: "women", confidence: null },
    ],
  };
}

let store: EditorStore;

beforeEach(() => {
  store = new EditorStore();
  store.loadRecord(serverRecord());
});

describe("loading", () => {
  it("tracks the server version and starts clean", () => {
    expect(store.expectedVersion).toBe(3);
    expect(store.dirty).toBe(false);
    expect(store.selection).toBeNull();
  });

  it("deep-copies the server record", () => {
    const original = serverRecord();
    store.loadRecord(original);
    store.select(0);
    store.moveSelected(0.1, 0.1);
    expect(original.regions[0].box.x0).toBeCloseTo(0.1);
  });
});

describe("dirty flag", () => {
  it("is true iff local state diverges from the last fetched record", () => {
    store.select(0);
    store.moveSelected(0.05, 0);
    expect(store.dirty).toBe(true);
    store.undo();
    expect(store.dirty).toBe(false);
  });

  it("reverting an edit by hand clears it", () => {
    store.setPhrase(0, "a boy");
    expect(store.dirty).toBe(true);
    store.setPhrase(0, "boy");
    expect(store.dirty).toBe(false);
  });

  it("clears after markSaved", () => {
    store.setCaption("edited caption");
    expect(store.dirty).toBe(true);
    store.markSaved(4);
    expect(store.dirty).toBe(false);
    expect(store.expectedVersion).toBe(4);
    expect(store.record!.version).toBe(4);
  });
});

describe("selection", () => {
  it("only accepts valid indices or null", () => {
    store.select(1);
    expect(store.selection).toBe(1);
    store.select(17);
    expect(store.selection).toBe(1); // unchanged
    store.select(null);
    expect(store.selection).toBeNull();
  });

  it("is cleared by delete", () => {
    store.select(0);
    store.deleteSelected();
    expect(store.selection).toBeNull();
    expect(store.record!.regions).toHaveLength(1);
  });
});

describe("region actions", () => {
  it("create adds and selects a region", () => {
    const result = store.createRegion({ x0: 0.2, y0: 0.2, x1: 0.3, y1: 0.3 });
    expect(result.ok).toBe(true);
    expect(store.record!.regions).toHaveLength(3);
    expect(store.selection).toBe(2);
    expect(store.record!.regions[2].phrase).toBe("object");
  });

  it("rejects degenerate drags with a hint", () => {
    const result = store.createRegion({ x0: 0.2, y0: 0.2, x1: 0.2, y1: 0.3 });
    expect(result.ok).toBe(false);
    if (!result.ok) expect(result.hint).toMatch(/small/);
    expect(store.record!.regions).toHaveLength(2);
    expect(store.dirty).toBe(false);
  });

  it("move and resize keep coordinates normalized", () => {
    store.select(1);
    store.moveSelected(0.5, 0.5);
    let box = store.record!.regions[1].box;
    expect(box.x1).toBeLessThanOrEqual(1);
    expect(box.y1).toBeLessThanOrEqual(1);
    store.resizeSelected("se", 1.8, 1.6);
    box = store.record!.regions[1].box;
    expect(box.x1).toBeLessThanOrEqual(1);
    expect(box.y1).toBeLessThanOrEqual(1);
    expect(box.x0).toBeLessThan(box.x1);
  });

  it("duplicate clones the box identically and selects the clone", () => {
    store.select(0);
    const result = store.duplicateSelected();
    expect(result.ok).toBe(true);
    const regions = store.record!.regions;
    expect(regions).toHaveLength(3);
    expect(regions[2].box).toEqual(regions[0].box);
    expect(store.selection).toBe(2);
    // now the annotator types the second phrase for the same object
    store.setSelectedPhrase("porters");
    expect(regions[2].phrase).toBe("porters");
    expect(regions[0].phrase).toBe("boy");
  });

  it("rejects empty phrases", () => {
    const result = store.setPhrase(0, "   ");
    expect(result.ok).toBe(false);
    expect(store.record!.regions[0].phrase).toBe("boy");
  });
});

describe("undo/redo", () => {
  it("round-trips a single action exactly", () => {
    const before = JSON.stringify(store.record);
    store.select(0);
    store.moveSelected(0.1, 0.1);
    store.undo();
    expect(JSON.stringify(store.record)).toBe(before);
    store.redo();
    expect(store.record!.regions[0].box.x0).toBeCloseTo(0.2, 12);
  });

  it("restores selection as part of the state", () => {
    store.select(1);
    store.deleteSelected();
    expect(store.selection).toBeNull();
    store.undo();
    expect(store.selection).toBe(1);
    expect(store.record!.regions).toHaveLength(2);
  });

  it("new actions clear the redo stack", () => {
    store.setCaption("one");
    store.undo();
    store.setCaption("two");
    expect(store.redo()).toBe(false);
    expect(store.record!.caption).toBe("two");
  });

  it(`keeps exactly the last ${UNDO_DEPTH} actions`, () => {
    for (let i = 0; i < UNDO_DEPTH + 10; i++) {
      store.setCaption(`caption ${i}`);
    }
    let undos = 0;
    while (store.undo()) undos++;
    expect(undos).toBe(UNDO_DEPTH);
    // the oldest snapshots were dropped: we land on caption 9, not the original
    expect(store.record!.caption).toBe("caption 9");
    let redos = 0;
    while (store.redo()) redos++;
    expect(redos).toBe(UNDO_DEPTH);
    expect(store.record!.caption).toBe(`caption ${UNDO_DEPTH + 9}`);
  });

  it("restores the state exactly across a mixed action sequence", () => {
    const checkpoints: string[] = [];
    const snap = () => JSON.stringify({ r: store.record, s: store.selection });

    checkpoints.push(snap());
    store.createRegion({ x0: 0.05, y0: 0.05, x1: 0.2, y1: 0.2 });
    checkpoints.push(snap());
    store.moveSelected(0.1, 0);
    checkpoints.push(snap());
    store.duplicateSelected("second phrase");
    checkpoints.push(snap());
    store.setSelectedPhrase("third");
    checkpoints.push(snap());
    store.deleteSelected();

    for (let i = checkpoints.length - 1; i >= 0; i--) {
      store.undo();
      expect(snap()).toBe(checkpoints[i]);
    }
  });
});
