use sepconv::conv::{arith_count, conv_single_pass_generic, convolve_plane, shadow_count};
use sepconv::image::{decode_ppm, encode_ppm, max_abs_diff, read_ppm, write_ppm};
use sepconv::{make_synthetic, ConvVariant, ExecPlan, Image, Plane, SeparableKernel, ValidRegion};

/// Straight four-loop sum in f64, independent of the library kernels.
fn naive(src: &Plane, k: &[f32]) -> Plane {
    let w = k.len();
    let r = w / 2;
    let mut out = src.clone();
    for i in r..src.rows() - r {
        for j in r..src.cols() - r {
            let mut acc = 0.0f64;
            for u in 0..w {
                for v in 0..w {
                    acc += f64::from(k[u])
                        * f64::from(k[v])
                        * f64::from(src.get(i + u - r, j + v - r));
                }
            }
            out.set(i, j, acc as f32);
        }
    }
    out
}

#[test]
fn variants_track_the_naive_sum() {
    let k = SeparableKernel::gaussian5();
    for (rows, cols) in [(12, 12), (31, 17), (64, 64)] {
        let image = make_synthetic(rows, cols, 2, 99).unwrap();
        let region = ValidRegion::for_radius(rows, cols, 2).unwrap();
        let inner = ValidRegion::doubly_interior(rows, cols, 2).unwrap();
        for p in image.planes() {
            let want = naive(p, k.weights());
            for variant in [
                ConvVariant::single_generic(false),
                ConvVariant::single_unrolled(false),
            ] {
                let mut a = p.clone();
                let mut b = p.clone();
                convolve_plane(&mut a, &k, variant, &mut b).unwrap();
                // Samples are below 256 and the weights are exact, so f32
                // accumulation stays within a few ulps of 256.
                assert!(max_abs_diff(&b, &want, &region).unwrap() < 1e-3);
            }
            let mut a = p.clone();
            let mut b = p.clone();
            convolve_plane(&mut a, &k, ConvVariant::two_pass(), &mut b).unwrap();
            assert!(max_abs_diff(&a, &want, &inner).unwrap() < 1e-3);
        }
    }
}

#[test]
fn wide_kernel_generic_path() {
    let k = SeparableKernel::new(vec![0.5, -1.0, 0.25, 2.0, 0.125, 1.0, -0.5]).unwrap();
    let p = make_synthetic(20, 23, 1, 4)
        .unwrap()
        .into_planes()
        .remove(0);
    let region = ValidRegion::for_radius(20, 23, 3).unwrap();
    let mut out = p.clone();
    conv_single_pass_generic(&p, &k.outer_product(), &mut out).unwrap();
    assert!(max_abs_diff(&out, &naive(&p, k.weights()), &region).unwrap() < 1e-2);

    let mut a = p.clone();
    let mut b = p.clone();
    assert!(convolve_plane(&mut a, &k, ConvVariant::single_unrolled(false), &mut b).is_err());
}

#[test]
fn counts_for_the_reference_sizes() {
    for side in [1152usize, 1728, 2592, 3888, 5832, 8748] {
        let valid = ((side - 4) * (side - 4)) as u64;
        assert_eq!(
            arith_count(ConvVariant::single_unrolled(true), side, side, 5).multiplications,
            25 * valid
        );
        assert_eq!(
            arith_count(ConvVariant::two_pass(), side, side, 5).multiplications,
            10 * valid
        );
    }
    let shadow = shadow_count(ConvVariant::two_pass(), 64, 64, 5).unwrap();
    assert_eq!(shadow, arith_count(ConvVariant::two_pass(), 64, 64, 5));
}

#[test]
fn ppm_file_roundtrip_and_blur() {
    let dir = std::env::temp_dir().join(format!("sepconv-oracle-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("in.ppm");

    // Integer samples survive the 8-bit encoding exactly.
    let planes = (0..3)
        .map(|c| Plane::from_fn(9, 11, |i, j| ((i * 31 + j * 7 + c * 50) % 256) as f32).unwrap())
        .collect();
    let image = Image::new(planes).unwrap();
    write_ppm(&image, &path).unwrap();
    let back = read_ppm(&path).unwrap();
    assert_eq!(back, image);

    let mut a = back.clone();
    let mut b = back.clone();
    sepconv::convolve_image(
        &mut a,
        &mut b,
        &SeparableKernel::gaussian5(),
        ConvVariant::two_pass(),
        ExecPlan::Sequential,
    )
    .unwrap();
    let bytes = encode_ppm(&a).unwrap();
    let decoded = decode_ppm(&bytes).unwrap();
    assert_eq!(
        (decoded.rows(), decoded.cols(), decoded.plane_count()),
        (9, 11, 3)
    );
    std::fs::remove_dir_all(&dir).unwrap();
}
