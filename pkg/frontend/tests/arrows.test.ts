import { describe, expect, it } from "vitest";
import { arrowToPrimitive, arrowsToFlowSpec } from "../src/arrows";
import { Arrow, DEFAULT_SETTINGS } from "../src/types";

const at = (x: number, y: number) => ({ x, y });

function arrow(partial: Partial<Arrow> & Pick<Arrow, "tool">): Arrow {
  return {
    anchor: at(10, 10),
    dragStart: at(10, 10),
    dragEnd: at(20, 10),
    ...partial,
  };
}

describe("arrowsToFlowSpec", () => {
  it("maps no arrows to an empty spec", () => {
    const spec = arrowsToFlowSpec([], [64, 64]);
    expect(spec).toEqual({ extent: [64, 64], dilation_radius: 2, primitives: [] });
  });

  it("maps a translation arrow to its drag vector", () => {
    const spec = arrowsToFlowSpec(
      [arrow({ tool: "translation", dragEnd: at(30, 5), maskRect: [2, 2, 12, 12] })],
      [64, 64]
    );
    expect(spec.primitives).toEqual([
      { kind: "translation", params: { d: [20, -5] }, mask_rect: [2, 2, 12, 12] },
    ]);
  });

  it("ignores degenerate zero-length drags", () => {
    const spec = arrowsToFlowSpec(
      [arrow({ tool: "translation", dragEnd: at(10, 10) })],
      [64, 64]
    );
    expect(spec.primitives).toEqual([]);
  });

  it("rotation: magnitude times gain, sign from tangential direction", () => {
    // center (10,10), drag starts right of center and moves up: CCW in
    // screen coordinates is negative cross, so sign is negative
    const up = arrowToPrimitive(
      arrow({ tool: "rotation", anchor: at(10, 10), dragStart: at(20, 10), dragEnd: at(20, 5) })
    )!;
    expect(up.kind).toBe("rotation");
    expect(up.params.center).toEqual([10, 10]);
    expect(up.params.angle_deg).toBeCloseTo(-5 * DEFAULT_SETTINGS.rotationGainDegPerPx);
    const down = arrowToPrimitive(
      arrow({ tool: "rotation", anchor: at(10, 10), dragStart: at(20, 10), dragEnd: at(20, 17) })
    )!;
    expect(down.params.angle_deg).toBeCloseTo(7 * DEFAULT_SETTINGS.rotationGainDegPerPx);
  });

  it("scale: dragging exactly to the unity circle gives factor 1", () => {
    const r = DEFAULT_SETTINGS.unityRadius;
    const prim = arrowToPrimitive(
      arrow({ tool: "scale", anchor: at(32, 32), dragStart: at(32, 32), dragEnd: at(32 + r, 32) })
    )!;
    expect(prim.kind).toBe("scale");
    expect(prim.params.factor).toBeCloseTo(1.0);
  });

  it("stretch: axis follows the drag direction", () => {
    const prim = arrowToPrimitive(
      arrow({ tool: "stretch", anchor: at(32, 32), dragStart: at(32, 32), dragEnd: at(32, 52) })
    )!;
    expect(prim.kind).toBe("stretch");
    expect(prim.params.axis_deg).toBeCloseTo(90);
    expect(prim.params.factor).toBeCloseTo(20 / DEFAULT_SETTINGS.unityRadius);
  });

  it("merges consecutive interpolated arrows into one primitive", () => {
    const spec = arrowsToFlowSpec(
      [
        arrow({ tool: "interpolated", dragStart: at(5, 30), dragEnd: at(5, 34) }),
        arrow({ tool: "interpolated", dragStart: at(30, 30), dragEnd: at(30, 22) }),
        arrow({ tool: "translation", dragStart: at(0, 0), dragEnd: at(4, 0) }),
      ],
      [64, 64]
    );
    expect(spec.primitives).toHaveLength(2);
    expect(spec.primitives[0]).toEqual({
      kind: "interpolated",
      params: {
        controls: [
          { pos: [5, 30], d: [0, 4] },
          { pos: [30, 30], d: [0, -8] },
        ],
      },
    });
    expect(spec.primitives[1]!.kind).toBe("translation");
  });

  it("prefers an uploaded mask image over a rect", () => {
    const prim = arrowToPrimitive(
      arrow({ tool: "translation", maskRect: [0, 0, 8, 8], maskImageId: "abc123" })
    )!;
    expect(prim.mask_image_id).toBe("abc123");
    expect(prim.mask_rect).toBeUndefined();
  });
});
