/** Brush-paint mask layer over the source image, exported as a grayscale
 * PNG blob (white = inside) for upload to the server. */
export class MaskLayer {
  canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private painting = false;

  constructor(
    public width: number,
    public height: number,
    public brushRadius = 4
  ) {
    this.canvas = document.createElement("canvas");
    this.canvas.width = width;
    this.canvas.height = height;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas unavailable");
    this.ctx = ctx;
    this.clear();
  }

  clear(): void {
    this.ctx.fillStyle = "black";
    this.ctx.fillRect(0, 0, this.width, this.height);
  }

  beginStroke(x: number, y: number): void {
    this.painting = true;
    this.paint(x, y);
  }

  paint(x: number, y: number): void {
    if (!this.painting) return;
    this.ctx.fillStyle = "white";
    this.ctx.beginPath();
    this.ctx.arc(x, y, this.brushRadius, 0, 2 * Math.PI);
    this.ctx.fill();
  }

  endStroke(): void {
    this.painting = false;
  }

  /** True if any pixel has been painted. */
  isEmpty(): boolean {
    const data = this.ctx.getImageData(0, 0, this.width, this.height).data;
    for (let i = 0; i < data.length; i += 4) if (data[i]! > 0) return false;
    return true;
  }

  toBlob(): Promise<Blob> {
    return new Promise((resolve, reject) => {
      this.canvas.toBlob((b) => (b ? resolve(b) : reject(new Error("toBlob failed"))), "image/png");
    });
  }
}
