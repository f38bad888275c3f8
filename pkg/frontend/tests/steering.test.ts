import { describe, expect, it } from "vitest";
import { SteeringController } from "../src/steering.js";

describe("keyboard steering", () => {
  it("maps arrows to the horizontal plane and page keys to z", () => {
    const s = new SteeringController([0, 0, 0], 1);
    expect(s.keyMove({ key: "ArrowRight" })).toEqual([1, 0, 0]);
    expect(s.keyMove({ key: "ArrowUp" })).toEqual([1, 1, 0]);
    expect(s.keyMove({ key: "PageDown" })).toEqual([1, 1, -1]);
    expect(s.keyMove({ key: "ArrowLeft" })).toEqual([0, 1, -1]);
    expect(s.keyMove({ key: "ArrowDown" })).toEqual([0, 0, -1]);
    expect(s.keyMove({ key: "PageUp" })).toEqual([0, 0, 0]);
  });

  it("multiplies the step by five with shift", () => {
    const s = new SteeringController([0, 0, 0], 1);
    expect(s.keyMove({ key: "ArrowRight", shiftKey: true })).toEqual([5, 0, 0]);
  });

  it("ignores non-steering keys without moving", () => {
    const s = new SteeringController([2, 3, 4], 1);
    expect(s.keyMove({ key: "a" })).toBeNull();
    expect(s.target).toEqual([2, 3, 4]);
  });

  it("does nothing while disabled", () => {
    const s = new SteeringController([0, 0, 0], 1);
    s.enabled = false;
    expect(s.keyMove({ key: "ArrowRight" })).toBeNull();
    expect(s.dragMove(10, 0, [1, 0, 0], [0, 0, 1])).toBeNull();
  });
});

describe("drag steering", () => {
  it("moves in the camera view plane", () => {
    const s = new SteeringController([0, 0, 0], 1);
    const p = s.dragMove(4, 0, [1, 0, 0], [0, 0, 1], 0.25)!;
    expect(p).toEqual([1, 0, 0]);
  });

  it("maps screen-down drags to motion against the view up axis", () => {
    const s = new SteeringController([0, 0, 0], 1);
    const p = s.dragMove(0, 4, [1, 0, 0], [0, 0, 1], 0.25)!;
    expect(p).toEqual([0, 0, -1]);
  });

  it("composes oblique view axes", () => {
    const s = new SteeringController([1, 1, 1], 1);
    const inv = Math.SQRT1_2;
    const p = s.dragMove(2, 0, [inv, inv, 0], [0, 0, 1], 0.5)!;
    expect(p[0]).toBeCloseTo(1 + inv, 12);
    expect(p[1]).toBeCloseTo(1 + inv, 12);
    expect(p[2]).toBeCloseTo(1, 12);
  });
});

describe("target sync", () => {
  it("adopts the engine pose so the next nudge is relative", () => {
    const s = new SteeringController([0, 0, 0], 1);
    s.sync([30, 0, 0]);
    expect(s.keyMove({ key: "ArrowLeft" })).toEqual([29, 0, 0]);
  });
});
