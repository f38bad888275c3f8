/** View layout switch: ultrasound overlay vs. dual 3D. Exactly one active. */

export const LAYOUTS = ["US_OVERLAY", "DUAL_3D"] as const;
export type ViewLayout = (typeof LAYOUTS)[number];

export class LayoutSwitch {
  active: ViewLayout;
  private listeners: Array<(layout: ViewLayout) => void> = [];

  constructor(initial: ViewLayout = "US_OVERLAY") {
    this.active = initial;
  }

  select(layout: ViewLayout): void {
    if (!LAYOUTS.includes(layout)) return;
    if (layout === this.active) return;
    this.active = layout;
    for (const fn of this.listeners) fn(layout);
  }

  onChange(fn: (layout: ViewLayout) => void): void {
    this.listeners.push(fn);
  }

  /** One flag per layout; exactly one is true. */
  flags(): Record<ViewLayout, boolean> {
    return {
      US_OVERLAY: this.active === "US_OVERLAY",
      DUAL_3D: this.active === "DUAL_3D",
    };
  }
}
