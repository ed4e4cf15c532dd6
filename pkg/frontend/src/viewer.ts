// 2-D slice viewer backed by the service's patch endpoint. The canvas shows
// one z-slice window; clicks map back to voxel coordinates.

import { SigseekClient } from "./api.js";

export class SliceViewer {
  center: { x: number; y: number; z: number };
  windowSize: number;
  scale: number;

  constructor(
    private canvas: HTMLCanvasElement,
    private api: SigseekClient,
    opts: { windowSize?: number; scale?: number } = {},
  ) {
    this.center = { x: 64, y: 64, z: 64 };
    this.windowSize = opts.windowSize ?? 128;
    this.scale = opts.scale ?? 4;
    canvas.width = this.windowSize * this.scale;
    canvas.height = this.windowSize * this.scale;
  }

  // canvas pixel -> voxel; the window is centered on this.center
  voxelAt(px: number, py: number): { x: number; y: number; z: number } {
    const half = Math.floor(this.windowSize / 2);
    return {
      x: this.center.x - half + Math.floor(px / this.scale),
      y: this.center.y - half + Math.floor(py / this.scale),
      z: this.center.z,
    };
  }

  async redraw(): Promise<void> {
    const url = this.api.patchUrl(
      this.center.x,
      this.center.y,
      this.center.z,
      this.windowSize,
    );
    const img = new Image();
    img.crossOrigin = "anonymous";
    await new Promise<void>((resolve, reject) => {
      img.onload = () => resolve();
      img.onerror = () => reject(new Error(`failed to load ${url}`));
      img.src = url;
    });
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
  }

  async centerOn(x: number, y: number, z: number): Promise<void> {
    this.center = { x, y, z };
    await this.redraw();
  }

  async stepSlice(delta: number): Promise<void> {
    this.center.z = Math.max(0, this.center.z + delta);
    await this.redraw();
  }
}
