//! File formats as an external producer writes them, byte by byte.

use syncore::divergence::Condition;
use syncore::{
    load_recording, Error, HeadSubset, LogitTrace, PairMatrix, PromptMeta, Recording, SubsetMode,
    UnitKind, UnitMeta,
};

fn phid_bytes(manifest: &str, values: &[f64]) -> Vec<u8> {
    let mut b = b"PHID".to_vec();
    b.extend_from_slice(&[1, 0, 0, 0]);
    b.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    b.extend_from_slice(manifest.as_bytes());
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

const TOY_MANIFEST: &str = "0,0,0,attention_head\n1,0,1,attention_head\n2,1,0,attention_head\n3,1,1,attention_head\np0,math\np1,code\ndims 4 2 3\n";

fn toy_values() -> Vec<f64> {
    (0..24).map(|i| (i as f64).sin()).collect()
}

#[test]
fn hand_written_recording_loads() {
    let bytes = phid_bytes(TOY_MANIFEST, &toy_values());
    let rec = Recording::from_bytes(&bytes).unwrap();
    assert_eq!(
        (rec.n_units(), rec.n_prompts(), rec.n_timesteps()),
        (4, 2, 3)
    );
    assert_eq!(rec.units()[2].layer, 1);
    assert_eq!(rec.units()[3].kind, UnitKind::AttentionHead);
    assert_eq!(rec.prompts()[1], PromptMeta::new("p1", "code"));
    // unit-major, prompt-middle, timestep-minor
    let v = toy_values();
    assert_eq!(rec.series(2, 1), &v[2 * 6 + 3..2 * 6 + 6]);
    assert_eq!(rec.to_bytes().unwrap(), bytes);
    assert_eq!(bytes.len(), 16 + TOY_MANIFEST.len() + 8 * 4 * 2 * 3);
}

#[test]
fn recording_errors_are_classified() {
    let good = phid_bytes(TOY_MANIFEST, &toy_values());

    let mut json = good.clone();
    json[..4].copy_from_slice(b"JSON");
    assert!(matches!(
        Recording::from_bytes(&json),
        Err(Error::Format(_))
    ));

    let short = &good[..good.len() - 8];
    assert!(matches!(
        Recording::from_bytes(short),
        Err(Error::Corruption(_))
    ));

    let mut v = toy_values();
    // unit 1, prompt 1, timestep 2
    v[6 + 3 + 2] = f64::NAN;
    let err = Recording::from_bytes(&phid_bytes(TOY_MANIFEST, &v)).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    let msg = err.to_string();
    assert!(
        msg.contains("unit 1") && msg.contains("prompt 1") && msg.contains("timestep 2"),
        "{msg}"
    );
}

#[test]
fn recording_file_round_trip() {
    let units: Vec<UnitMeta> = (0..3)
        .map(|i| UnitMeta {
            unit_id: i,
            layer: i / 2,
            index_in_layer: i % 2,
            kind: UnitKind::Expert,
        })
        .collect();
    let prompts = vec![PromptMeta::new("a", "qa")];
    let rec = Recording::new(units, prompts, 4, (0..12).map(f64::from).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.phid");
    syncore::save_recording(&rec, &path).unwrap();
    assert_eq!(load_recording(&path).unwrap(), rec);
}

fn phil_bytes(prompt: &str, manifest: &str, tokens: &[u32], probs: &[f32]) -> Vec<u8> {
    let mut b = b"PHIL".to_vec();
    b.extend_from_slice(&[1, 0, 0, 0]);
    b.extend_from_slice(&(prompt.len() as u32).to_le_bytes());
    b.extend_from_slice(prompt.as_bytes());
    b.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    b.extend_from_slice(manifest.as_bytes());
    let v = probs.len() / tokens.len();
    b.extend_from_slice(&(v as u32).to_le_bytes());
    b.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for t in tokens {
        b.extend_from_slice(&t.to_le_bytes());
    }
    for p in probs {
        b.extend_from_slice(&p.to_le_bytes());
    }
    b
}

#[test]
fn hand_written_traces_load() {
    let probs = [0.5f32, 0.25, 0.25, 0.125, 0.75, 0.125];
    let base = phil_bytes(
        "q7",
        "decoding greedy\ncondition non_ablated\ntemperature 1.0\n",
        &[0, 1],
        &probs,
    );
    let t = LogitTrace::from_bytes(&base).unwrap();
    assert_eq!(t.prompt_id(), "q7");
    assert_eq!(t.condition, Condition::NonAblated);
    assert_eq!(t.extra, vec![("temperature".into(), "1.0".into())]);
    assert_eq!(t.step(1), &probs[3..]);
    assert_eq!(t.to_bytes(), base);

    let ablated = phil_bytes(
        "q7",
        "decoding greedy\ncondition ablated\norder random\nfraction 0.25\nseed 3\nunits 4,0\n",
        &[0, 1],
        &[0.25, 0.5, 0.25, 0.25, 0.5, 0.25],
    );
    let a = LogitTrace::from_bytes(&ablated).unwrap();
    assert_eq!(
        a.condition,
        Condition::Ablated {
            order: "random".into(),
            fraction: 0.25,
            seed: 3,
            unit_ids: vec![4, 0],
        }
    );
    assert_eq!(a.to_bytes(), ablated);
    let d = syncore::behaviour_divergence(&t, &a).unwrap();
    // step 0: ln2/4; step 1: 0.75 ln1.5 - ln2/4
    let want = 0.375 * 1.5f64.ln();
    assert!((d - want).abs() < 1e-7, "{d} vs {want}");
}

#[test]
fn trace_errors_are_classified() {
    let good = phil_bytes(
        "x",
        "decoding greedy\ncondition non_ablated\n",
        &[1],
        &[0.5, 0.5],
    );
    let mut bad = good.clone();
    bad[3] = b'D';
    assert!(matches!(
        LogitTrace::from_bytes(&bad),
        Err(Error::Format(_))
    ));
    assert!(LogitTrace::from_bytes(&good[..good.len() - 2]).is_err());
    let unnormalised = phil_bytes(
        "x",
        "decoding greedy\ncondition non_ablated\n",
        &[1],
        &[0.5, 0.4],
    );
    assert!(LogitTrace::from_bytes(&unnormalised).is_err());
    let out_of_vocab = phil_bytes(
        "x",
        "decoding greedy\ncondition non_ablated\n",
        &[2],
        &[0.5, 0.5],
    );
    assert!(LogitTrace::from_bytes(&out_of_vocab).is_err());
}

#[test]
fn subset_file_json_shape() {
    let s = HeadSubset {
        unit_ids: vec![5, 1, 9],
        mode: SubsetMode::MostRedundant,
        fraction: 0.1,
        seed: 0,
    };
    let v: serde_json::Value = serde_json::to_value(&s).unwrap();
    assert_eq!(
        v,
        serde_json::json!({"unit_ids": [5, 1, 9], "mode": "most_redundant", "fraction": 0.1, "seed": 0})
    );
    let back: HeadSubset = serde_json::from_value(v).unwrap();
    assert_eq!(back, s);
}

#[test]
fn matrix_file_layout() {
    let rec = syncore::generate(&syncore::SynthSpec {
        n_prompts: 2,
        n_timesteps: 30,
        ..syncore::SynthSpec::new(syncore::SynthKind::RedundantCommonDriver)
    })
    .unwrap();
    let pm = syncore::pair_matrices(&rec, &syncore::PairOptions::default())
        .unwrap()
        .matrix;
    let bytes = pm.to_bytes();
    assert_eq!(&bytes[..4], b"PHIM");
    assert_eq!(bytes[4], 1);
    let n = pm.n();
    let n_field = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    assert_eq!(n_field, n);
    let at = |block: usize, k: usize| {
        let o = 16 + 8 * (block * n * n + k);
        f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
    };
    for k in 0..n * n {
        assert_eq!(at(0, k).to_bits(), pm.synergy[k].to_bits());
        assert_eq!(at(1, k).to_bits(), pm.redundancy[k].to_bits());
    }
    assert_eq!(PairMatrix::from_bytes(&bytes).unwrap().to_bytes(), bytes);
}
