use motseg::datasets::synthetic::generate_sequences;
use motseg::datasets::{generate_synthetic, load_instancemotseg, FrameSample, Split, SyntheticSceneConfig};

fn scene() -> SyntheticSceneConfig {
    SyntheticSceneConfig {
        image_size: [64, 64],
        shape_size: [10, 18],
        frames_per_sequence: 10,
        num_sequences: 2,
        seed: 21,
        ..Default::default()
    }
}

fn assert_same(a: &FrameSample, b: &FrameSample) {
    assert_eq!((&a.sequence_id, &a.frame_id), (&b.sequence_id, &b.frame_id));
    assert_eq!(a.image_t, b.image_t);
    assert_eq!(a.image_t1, b.image_t1);
    assert_eq!(a.flow, b.flow);
    assert_eq!(a.annotations, b.annotations);
    assert_eq!(a.negative_frame, b.negative_frame);
}

#[test]
fn written_dataset_loads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&scene(), dir.path()).unwrap();
    let loaded = load_instancemotseg(dir.path(), Split::All).unwrap();
    let memory: Vec<FrameSample> = generate_sequences(&scene()).unwrap().into_iter().flat_map(|s| s.frames).collect();
    assert_eq!(loaded.len(), memory.len());
    for (a, b) in loaded.iter().zip(&memory) {
        assert_same(a, b);
    }
}

#[test]
fn splits_take_the_tail_of_each_sequence() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&scene(), dir.path()).unwrap();
    let train = load_instancemotseg(dir.path(), Split::Train).unwrap();
    let test = load_instancemotseg(dir.path(), Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (16, 4));
    for seq in ["seq000", "seq001"] {
        let last_train = train.iter().filter(|s| s.sequence_id == seq).map(|s| &s.frame_id).max().unwrap();
        let first_test = test.iter().filter(|s| s.sequence_id == seq).map(|s| &s.frame_id).min().unwrap();
        assert!(last_train < first_test);
    }
}

#[test]
fn missing_root_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_instancemotseg(dir.path().join("absent"), Split::All).is_err());
}
