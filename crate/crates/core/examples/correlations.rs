//! Matthews correlation between models' stability flags and Pearson
//! correlation between entropy columns with missing values.

use std::collections::BTreeMap;

use vqastab::stats::{matthews_matrix, mcc, pearson_matrix};

fn main() {
    let a = [true, true, false, false, true, false];
    let b = [true, false, false, false, true, true];
    println!("mcc = {:?}", mcc(&a, &b).unwrap());

    let flags = |v: &[bool]| -> BTreeMap<String, bool> {
        v.iter().enumerate().map(|(i, f)| (format!("s{i}"), *f)).collect()
    };
    let models = vec![
        ("model-a".to_string(), flags(&a)),
        ("model-b".to_string(), flags(&b)),
        ("model-c".to_string(), flags(&[true, true, false, true, true, false])),
    ];
    print!("{}", matthews_matrix(&models).unwrap().to_csv());

    let columns = vec![
        ("H_V".to_string(), vec![Some(0.0), Some(0.5), Some(1.0), None, Some(0.2)]),
        ("H_P".to_string(), vec![Some(0.1), Some(0.4), Some(0.9), Some(0.3), None]),
        ("confidence".to_string(), vec![Some(0.95), Some(0.7), Some(0.55), Some(0.8), Some(0.9)]),
    ];
    print!("{}", pearson_matrix(&columns).unwrap().to_csv());
}
