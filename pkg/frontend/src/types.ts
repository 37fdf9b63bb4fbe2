export type ToolKind =
  | "translation"
  | "rotation"
  | "stretch"
  | "scale"
  | "interpolated";

export interface Point {
  x: number;
  y: number;
}

/** One authored arrow. For rotation the anchor is the center set by the
 * initial click and the drag runs from dragStart to dragEnd; for the other
 * tools the drag starts at the anchor. */
export interface Arrow {
  tool: ToolKind;
  anchor: Point;
  dragStart: Point;
  dragEnd: Point;
  maskRect?: [number, number, number, number];
  maskImageId?: string;
}

export interface EditorSettings {
  /** degrees of rotation per pixel of tangential drag */
  rotationGainDegPerPx: number;
  /** drag distance (px) that maps to factor 1 for scale/stretch */
  unityRadius: number;
}

export const DEFAULT_SETTINGS: EditorSettings = {
  rotationGainDegPerPx: 2,
  unityRadius: 40,
};

export interface PrimitiveDoc {
  kind: string;
  params: Record<string, unknown>;
  mask_rect?: [number, number, number, number];
  mask_image_id?: string;
}

export interface FlowSpecDoc {
  extent: [number, number];
  dilation_radius?: number;
  primitives: PrimitiveDoc[];
}

export interface JobStatus {
  state: "queued" | "running" | "done" | "failed";
  progress: { t: number; k: number; total: number };
  losses: { flow: number | null; color: number | null; total: number | null };
  error: string | null;
  outputs: Record<string, string>;
}
