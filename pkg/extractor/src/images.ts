/**
 * Image loading and preprocessing.
 *
 * Radiographs are effectively grayscale; decoded pixels are averaged to one
 * luminance channel, bilinearly resized to the model's square input,
 * replicated to three channels and normalized with the standard
 * ImageNet statistics. All steps are pure functions of the file bytes, so
 * extraction is deterministic.
 */

import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'
import * as jpeg from 'jpeg-js'

export interface GrayImage {
  height: number
  width: number
  /** luminance in [0, 1], row-major */
  pixels: Float32Array
}

export const IMAGENET_MEAN = [0.485, 0.456, 0.406]
export const IMAGENET_STD = [0.229, 0.224, 0.225]

function rgbaToGray(data: Uint8Array, height: number, width: number): GrayImage {
  const pixels = new Float32Array(height * width)
  for (let i = 0; i < height * width; i++) {
    const r = data[i * 4]
    const g = data[i * 4 + 1]
    const b = data[i * 4 + 2]
    pixels[i] = (r + g + b) / (3 * 255)
  }
  return { height, width, pixels }
}

function decodePgm(buf: Buffer): GrayImage {
  // binary P5 only; maxval up to 255
  const text = buf.toString('latin1')
  const match = /^P5\s+(\d+)\s+(\d+)\s+(\d+)\s/.exec(text)
  if (!match) throw new Error('not a binary PGM (P5) file')
  const width = Number(match[1])
  const height = Number(match[2])
  const maxval = Number(match[3])
  if (maxval > 255) throw new Error('16-bit PGM is not supported')
  const offset = match[0].length
  if (buf.length < offset + width * height) throw new Error('truncated PGM payload')
  const pixels = new Float32Array(width * height)
  for (let i = 0; i < width * height; i++) {
    pixels[i] = buf[offset + i] / maxval
  }
  return { height, width, pixels }
}

export function loadImage(filePath: string): GrayImage {
  const buf = fs.readFileSync(filePath)
  const ext = path.extname(filePath).toLowerCase()
  if (ext === '.png') {
    const png = PNG.sync.read(buf)
    return rgbaToGray(new Uint8Array(png.data), png.height, png.width)
  }
  if (ext === '.jpg' || ext === '.jpeg') {
    const img = jpeg.decode(buf, { useTArray: true, formatAsRGBA: true })
    return rgbaToGray(img.data, img.height, img.width)
  }
  if (ext === '.pgm') {
    return decodePgm(buf)
  }
  throw new Error(`unsupported image format '${ext}' (png, jpeg, pgm)`)
}

/** Bilinear resize with half-pixel sample centers, edge-clamped. */
export function resizeGray(img: GrayImage, outHeight: number, outWidth: number): GrayImage {
  if (img.height === outHeight && img.width === outWidth) {
    return { height: outHeight, width: outWidth, pixels: img.pixels.slice() }
  }
  const out = new Float32Array(outHeight * outWidth)
  for (let i = 0; i < outHeight; i++) {
    let sy = ((i + 0.5) * img.height) / outHeight - 0.5
    sy = Math.min(Math.max(sy, 0), img.height - 1)
    const y0 = Math.floor(sy)
    const y1 = Math.min(y0 + 1, img.height - 1)
    const ty = sy - y0
    for (let j = 0; j < outWidth; j++) {
      let sx = ((j + 0.5) * img.width) / outWidth - 0.5
      sx = Math.min(Math.max(sx, 0), img.width - 1)
      const x0 = Math.floor(sx)
      const x1 = Math.min(x0 + 1, img.width - 1)
      const tx = sx - x0
      const top =
        img.pixels[y0 * img.width + x0] * (1 - tx) + img.pixels[y0 * img.width + x1] * tx
      const bottom =
        img.pixels[y1 * img.width + x0] * (1 - tx) + img.pixels[y1 * img.width + x1] * tx
      out[i * outWidth + j] = top * (1 - ty) + bottom * ty
    }
  }
  return { height: outHeight, width: outWidth, pixels: out }
}

/**
 * Grayscale image -> normalized (size, size, 3) tensor data: three replicated
 * channels, each (x - mean_c) / std_c.
 */
export function preprocess(img: GrayImage, inputSize: number): Float32Array {
  const resized = resizeGray(img, inputSize, inputSize)
  const out = new Float32Array(inputSize * inputSize * 3)
  for (let i = 0; i < inputSize * inputSize; i++) {
    const v = resized.pixels[i]
    for (let c = 0; c < 3; c++) {
      out[i * 3 + c] = (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
    }
  }
  return out
}
