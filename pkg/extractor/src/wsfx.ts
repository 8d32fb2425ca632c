/**
 * WSFX feature-map files: magic "WSFX", u16 version 1, u8 dtype 0 (float32
 * little-endian), u8 reserved, u32 height/width/channels, then the float32
 * payload in (h, w, c) order with the channel index fastest.
 *
 * This mirrors the detector package's format byte for byte so extractor
 * output feeds straight into its pipeline.
 */

export const WSFX_MAGIC = 'WSFX'
export const WSFX_VERSION = 1
export const WSFX_HEADER_SIZE = 20

export interface FeatureMap {
  height: number
  width: number
  channels: number
  /** length height*width*channels, (h, w, c) order, c fastest */
  data: Float32Array
}

export function encodeWsfx(map: FeatureMap): Buffer {
  const { height, width, channels, data } = map
  if (height < 1 || width < 1 || channels < 1) {
    throw new Error(`invalid dimensions ${height}x${width}x${channels}`)
  }
  if (data.length !== height * width * channels) {
    throw new Error(
      `payload has ${data.length} values, dims require ${height * width * channels}`,
    )
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) throw new Error(`non-finite value at index ${i}`)
  }
  const buf = Buffer.allocUnsafe(WSFX_HEADER_SIZE + data.length * 4)
  buf.write(WSFX_MAGIC, 0, 'ascii')
  buf.writeUInt16LE(WSFX_VERSION, 4)
  buf.writeUInt8(0, 6) // dtype 0 = float32 LE
  buf.writeUInt8(0, 7)
  buf.writeUInt32LE(height, 8)
  buf.writeUInt32LE(width, 12)
  buf.writeUInt32LE(channels, 16)
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], WSFX_HEADER_SIZE + i * 4)
  }
  return buf
}

export function decodeWsfx(buf: Buffer): FeatureMap {
  if (buf.length < WSFX_HEADER_SIZE) {
    throw new Error(`file too short for header (${buf.length} bytes)`)
  }
  if (buf.toString('ascii', 0, 4) !== WSFX_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(buf.toString('ascii', 0, 4))}`)
  }
  const version = buf.readUInt16LE(4)
  if (version !== WSFX_VERSION) throw new Error(`unsupported version ${version}`)
  const dtype = buf.readUInt8(6)
  if (dtype !== 0) throw new Error(`unsupported dtype code ${dtype}`)
  const height = buf.readUInt32LE(8)
  const width = buf.readUInt32LE(12)
  const channels = buf.readUInt32LE(16)
  const expected = height * width * channels * 4
  const payload = buf.length - WSFX_HEADER_SIZE
  if (payload !== expected) {
    throw new Error(`payload has ${payload} bytes, header requires ${expected}`)
  }
  const data = new Float32Array(height * width * channels)
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(WSFX_HEADER_SIZE + i * 4)
  }
  return { height, width, channels, data }
}
