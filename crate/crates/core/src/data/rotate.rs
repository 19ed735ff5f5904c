/// Rotates a square row-major image counter-clockwise (as displayed, row 0
/// at the top) about its center, sampling the source bilinearly.
///
/// Source pixels outside the image contribute 0 and the output is clamped
/// to `[0, 1]`.
pub fn rotate_image(image: &[f32], side: usize, degrees: f64) -> Vec<f32> {
    assert_eq!(image.len(), side * side, "rotate_image expects a square image");
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let c = (side as f64 - 1.0) / 2.0;
    let pixel = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= side as isize || col >= side as isize {
            0.0
        } else {
            image[r as usize * side + col as usize] as f64
        }
    };
    let mut out = vec![0.0f32; side * side];
    for r in 0..side {
        for col in 0..side {
            // Inverse map: output (x, y) with y pointing up comes from R(-θ)(x, y).
            let x = col as f64 - c;
            let y = c - r as f64;
            let sx = cos * x + sin * y;
            let sy = -sin * x + cos * y;
            let src_col = sx + c;
            let src_row = c - sy;
            let r0 = src_row.floor();
            let c0 = src_col.floor();
            let fr = src_row - r0;
            let fc = src_col - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = (1.0 - fr) * ((1.0 - fc) * pixel(r0, c0) + fc * pixel(r0, c0 + 1))
                + fr * ((1.0 - fc) * pixel(r0 + 1, c0) + fc * pixel(r0 + 1, c0 + 1));
            out[r * side + col] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(side: usize) -> Vec<f32> {
        (0..side * side).map(|k| ((k * 37 + 11) % 101) as f32 / 100.0).collect()
    }

    #[test]
    fn zero_angle_is_identity() {
        let img = pattern(28);
        assert_eq!(rotate_image(&img, 28, 0.0), img);
    }

    #[test]
    fn full_turn_matches_identity() {
        let img = pattern(28);
        let out = rotate_image(&img, 28, 360.0);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        // Counter-clockwise by 90°: the top row becomes the left column read
        // bottom-up, i.e. out[r][c] = in[c][side-1-r].
        let side = 7;
        let img = pattern(side);
        let out = rotate_image(&img, side, 90.0);
        for r in 0..side {
            for c in 0..side {
                let expect = img[c * side + (side - 1 - r)];
                assert!((out[r * side + c] - expect).abs() <= 1e-6, "({r},{c})");
            }
        }
    }

    #[test]
    fn output_stays_in_unit_interval() {
        let img = vec![1.0; 28 * 28];
        let out = rotate_image(&img, 28, 17.3);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        // Corners rotate out of the frame.
        assert!(out[0] < 1.0);
    }
}
