use crate::error::{Error, Result};
use crate::mapfile::MapArray;
use crate::models::config::EncoderConfig;

impl EncoderConfig {
    /// Converts a stored map to the encoder's `[3, H, W]` input: channel-last
    /// maps are transposed, single-channel maps are replicated to three
    /// channels, then non-overlapping `pool` windows are averaged (trailing
    /// partial windows are dropped).
    pub fn prepare(&self, map: &MapArray) -> Result<Vec<f64>> {
        if map.dims != self.map_dims {
            return Err(Error::dim("encoder map", &map.dims, &self.map_dims));
        }
        let w = self.map_dims[1];
        let channels = if self.map_dims.len() == 3 { 3 } else { 1 };
        let [_, oh, ow] = self.input_shape();
        let [ph, pw] = self.pool;
        let inv = 1.0 / (ph * pw) as f64;
        let mut out = vec![0.0; 3 * oh * ow];
        for c in 0..3 {
            let src = if channels == 3 { c } else { 0 };
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for y in oy * ph..(oy + 1) * ph {
                        let row = y * w;
                        for x in ox * pw..(ox + 1) * pw {
                            acc += map.values[(row + x) * channels + src] as f64;
                        }
                    }
                    out[(c * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dims: Vec<usize>, pool: [usize; 2]) -> EncoderConfig {
        EncoderConfig {
            map_dims: dims,
            pool,
            block_channels: vec![2],
            feature_dim: 4,
        }
    }

    #[test]
    fn channel_last_is_transposed_and_pooled() {
        // value = 100·y + 10·x + c
        let (h, w) = (4, 6);
        let values: Vec<f32> = (0..h * w * 3)
            .map(|i| {
                let (p, c) = (i / 3, i % 3);
                (100 * (p / w) + 10 * (p % w) + c) as f32
            })
            .collect();
        let map = MapArray::new(vec![h, w, 3], values).unwrap();
        let out = cfg(vec![h, w, 3], [2, 3]).prepare(&map).unwrap();
        assert_eq!(out.len(), 3 * 2 * 2);
        // channel 1, pooled cell (1, 0): rows 2..4, cols 0..3
        let expected = (100.0 * 2.5) + (10.0 * 1.0) + 1.0;
        assert!((out[(2 + 1) * 2] - expected).abs() < 1e-9);
    }

    #[test]
    fn single_channel_is_replicated() {
        let map = MapArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = cfg(vec![2, 2], [1, 1]).prepare(&map).unwrap();
        assert_eq!(out, [1.0, 2.0, 3.0, 4.0].repeat(3));
        assert!(cfg(vec![2, 3], [1, 1]).prepare(&map).is_err());
    }

    #[test]
    fn odd_tail_is_dropped() {
        let map = MapArray::new(vec![3, 1], vec![1.0, 3.0, 100.0]).unwrap();
        let out = cfg(vec![3, 1], [2, 1]).prepare(&map).unwrap();
        assert_eq!(out, vec![2.0; 3]);
    }
}
