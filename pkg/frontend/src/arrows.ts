import {
  Arrow,
  DEFAULT_SETTINGS,
  EditorSettings,
  FlowSpecDoc,
  Point,
  PrimitiveDoc,
} from "./types";

const EPS = 1e-9;

function sub(a: Point, b: Point): Point {
  return { x: a.x - b.x, y: a.y - b.y };
}

function norm(p: Point): number {
  return Math.hypot(p.x, p.y);
}

function cross(a: Point, b: Point): number {
  return a.x * b.y - a.y * b.x;
}

export function dragVector(a: Arrow): Point {
  return sub(a.dragEnd, a.dragStart);
}

/** Map one arrow to its primitive, or null for a degenerate (zero) drag. */
export function arrowToPrimitive(
  arrow: Arrow,
  settings: EditorSettings = DEFAULT_SETTINGS
): PrimitiveDoc | null {
  const d = dragVector(arrow);
  const len = norm(d);
  if (len < EPS) return null;
  const center: [number, number] = [arrow.anchor.x, arrow.anchor.y];
  let prim: PrimitiveDoc;
  switch (arrow.tool) {
    case "translation":
      prim = { kind: "translation", params: { d: [d.x, d.y] } };
      break;
    case "rotation": {
      // tangential drag around the center: magnitude sets the angle, the
      // cross product of (radial, drag) sets the sign
      const radial = sub(arrow.dragStart, arrow.anchor);
      const sign = cross(radial, d) >= 0 ? 1 : -1;
      prim = {
        kind: "rotation",
        params: {
          center,
          angle_deg: sign * len * settings.rotationGainDegPerPx,
        },
      };
      break;
    }
    case "scale":
      prim = {
        kind: "scale",
        params: { center, factor: len / settings.unityRadius },
      };
      break;
    case "stretch":
      prim = {
        kind: "stretch",
        params: {
          center,
          axis_deg: (Math.atan2(d.y, d.x) * 180) / Math.PI,
          factor: len / settings.unityRadius,
        },
      };
      break;
    case "interpolated":
      // handled jointly in arrowsToFlowSpec; a lone arrow degenerates to a
      // single-control primitive
      prim = {
        kind: "interpolated",
        params: {
          controls: [{ pos: [arrow.dragStart.x, arrow.dragStart.y], d: [d.x, d.y] }],
        },
      };
      break;
  }
  if (arrow.maskImageId !== undefined) prim.mask_image_id = arrow.maskImageId;
  else if (arrow.maskRect !== undefined) prim.mask_rect = arrow.maskRect;
  return prim;
}

/** Serialize a session's arrows to the server's FlowSpec document.
 *
 * Consecutive interpolated arrows sharing one mask merge into a single
 * interpolated primitive (one control per arrow); every other arrow maps to
 * exactly one primitive. Degenerate drags are skipped.
 */
export function arrowsToFlowSpec(
  arrows: Arrow[],
  extent: [number, number],
  settings: EditorSettings = DEFAULT_SETTINGS,
  dilationRadius = 2
): FlowSpecDoc {
  const primitives: PrimitiveDoc[] = [];
  let i = 0;
  while (i < arrows.length) {
    const arrow = arrows[i]!;
    if (arrow.tool === "interpolated") {
      const group: Arrow[] = [];
      while (
        i < arrows.length &&
        arrows[i]!.tool === "interpolated" &&
        arrows[i]!.maskImageId === arrow.maskImageId &&
        JSON.stringify(arrows[i]!.maskRect) === JSON.stringify(arrow.maskRect)
      ) {
        group.push(arrows[i]!);
        i += 1;
      }
      const controls = group
        .filter((a) => norm(dragVector(a)) >= EPS)
        .map((a) => ({
          pos: [a.dragStart.x, a.dragStart.y],
          d: [dragVector(a).x, dragVector(a).y],
        }));
      if (controls.length > 0) {
        const prim: PrimitiveDoc = { kind: "interpolated", params: { controls } };
        if (arrow.maskImageId !== undefined) prim.mask_image_id = arrow.maskImageId;
        else if (arrow.maskRect !== undefined) prim.mask_rect = arrow.maskRect;
        primitives.push(prim);
      }
      continue;
    }
    const prim = arrowToPrimitive(arrow, settings);
    if (prim !== null) primitives.push(prim);
    i += 1;
  }
  return { extent, dilation_radius: dilationRadius, primitives };
}
