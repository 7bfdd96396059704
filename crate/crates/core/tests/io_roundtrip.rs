use affine_bv::grid::{GridFunction, GridSpec};
use affine_bv::io::{field_to_csv, load_afg1, read_afg1, save_afg1, write_afg1};
use proptest::prelude::*;

fn any_bits() -> impl Strategy<Value = f64> {
    // every finite bit pattern, subnormals and signed zeros included
    any::<u64>().prop_map(f64::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn field() -> impl Strategy<Value = GridFunction> {
    (prop::collection::vec(4usize..9, 2..=3), 1e-3f64..10.0, prop::collection::vec(-50.0f64..50.0, 3))
        .prop_flat_map(|(shape, h, origin)| {
            let len: usize = shape.iter().product();
            let dim = shape.len();
            prop::collection::vec(any_bits(), len).prop_map(move |values| {
                let spec = GridSpec::new(shape.clone(), h, origin[..dim].to_vec()).unwrap();
                GridFunction::new(spec, values).unwrap()
            })
        })
}

proptest! {
    #[test]
    fn afg1_roundtrip_is_bit_identical(u in field()) {
        let mut bytes = Vec::new();
        write_afg1(&u, &mut bytes).unwrap();
        let back = read_afg1(&bytes[..]).unwrap();
        prop_assert_eq!(back.spec(), u.spec());
        let a: Vec<u64> = u.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        let mut again = Vec::new();
        write_afg1(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn csv_values_parse_back_exactly(u in field()) {
        let csv = field_to_csv(&u);
        let dim = u.spec().dim();
        for (line, v) in csv.lines().skip(1).zip(u.values()) {
            let cols: Vec<&str> = line.split(',').collect();
            prop_assert_eq!(cols.len(), dim + 1);
            let parsed: f64 = cols[dim].parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }
}

#[test]
fn file_roundtrip() {
    let spec = GridSpec::cube(3, 6, &[0.0, 0.0, 0.0], 2.0).unwrap();
    let u = GridFunction::from_fn(&spec, |x| x[0] - 2.0 * x[1] + x[2].sin());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.afg1");
    save_afg1(&u, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 8 + 4 + 3 * 4 + 8 + 3 * 8 + 216 * 8);
    assert_eq!(load_afg1(&path).unwrap(), u);
}

#[test]
fn non_finite_values_are_rejected() {
    let spec = GridSpec::cube(2, 4, &[0.0, 0.0], 1.0).unwrap();
    let mut bytes = Vec::new();
    write_afg1(&GridFunction::zeros(&spec), &mut bytes).unwrap();
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(matches!(read_afg1(&bytes[..]), Err(affine_bv::Error::Format(_))));
}
