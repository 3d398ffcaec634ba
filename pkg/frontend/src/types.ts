/** Wire types mirroring the service's regions.jsonl schema. */

export interface NormalizedBox {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface Region {
  box: NormalizedBox;
  phrase: string;
  confidence: number | null;
}

export interface AnnotationRecord {
  image_id: string;
  caption: string;
  regions: Region[];
  version: number;
}

export interface ImageListItem {
  image_id: string;
  region_count: number;
  annotated: boolean;
  split: string;
}

export interface ImagePage {
  total: number;
  offset: number;
  limit: number;
  items: ImageListItem[];
}

export interface Progress {
  total: number;
  human_annotated: number;
  per_split: Record<string, { total: number; annotated: number }>;
}

export function boxToWire(box: NormalizedBox): [number, number, number, number] {
  return [box.x0, box.y0, box.x1, box.y1];
}

export function boxFromWire(values: number[]): NormalizedBox {
  const [x0, y0, x1, y1] = values;
  return { x0, y0, x1, y1 };
}

export function cloneRecord(record: AnnotationRecord): AnnotationRecord {
  return {
    image_id: record.image_id,
    caption: record.caption,
    version: record.version,
    regions: record.regions.map((r) => ({ box: { ...r.box }, phrase: r.phrase, confidence: r.confidence })),
  };
}

/** Canonical JSON of the editable content (caption + regions), for dirty checks. */
export function contentKey(record: AnnotationRecord): string {
  return JSON.stringify({
    caption: record.caption,
    regions: record.regions.map((r) => [r.box.x0, r.box.y0, r.box.x1, r.box.y1, r.phrase, r.confidence]),
  });
}
