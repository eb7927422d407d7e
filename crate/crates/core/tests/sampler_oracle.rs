use patchsift_core::hashindex::build_table;
use patchsift_core::klsh::HashCode;
use patchsift_core::sampler::bst_sample;
use patchsift_testkit::{corpus, oracle};
use rand::Rng;

const CODE_LEN: u32 = 24;
const PREFIX: u32 = 10;

#[test]
fn bst_sample_matches_brute_force_on_random_buckets() {
    let mut rng = corpus::rng(20_240_611);
    let mut mismatches = Vec::new();
    for case in 0..1000u64 {
        let size = rng.gen_range(1..=15usize);
        // Few distinct suffixes so equal codes (tie broken by id) show up.
        let suffix_range = if case % 3 == 0 { 4 } else { 1 << 14 };
        let key = case % (1 << PREFIX);
        let mut entries = Vec::with_capacity(size);
        for i in 0..size {
            let code = (key << (CODE_LEN - PREFIX)) | rng.gen_range(0..suffix_range);
            let value = f64::from(rng.gen_range(0..20u32));
            entries.push((code, case * 100 + i as u64, value));
        }
        let epsilon = rng.gen_range(1..=100u32) as f64 / 101.0;

        let ids: Vec<u64> = entries.iter().map(|e| e.1).collect();
        let codes: Vec<HashCode> = entries.iter().map(|e| HashCode::new(e.0, CODE_LEN).unwrap()).collect();
        let rows: Vec<Vec<f64>> = entries.iter().map(|e| vec![e.2]).collect();
        let features = patchsift_core::dataset::FeatureMatrix::from_rows(
            ids.clone(),
            &rows,
            patchsift_core::dataset::FeatureConfig::default(),
        )
        .unwrap();
        let table = build_table(&ids, &codes, PREFIX).unwrap();
        assert_eq!(table.num_buckets(), 1);

        let got = bst_sample(&table, &features, epsilon).unwrap().selected;
        let want = oracle::sample_bucket(&entries, epsilon);
        if got != want {
            mismatches.push((case, got, want));
        }
    }
    assert!(mismatches.is_empty(), "{} mismatches, first: {:?}", mismatches.len(), mismatches.first());
}
