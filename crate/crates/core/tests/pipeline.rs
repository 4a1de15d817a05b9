use std::collections::{HashMap, HashSet};

use voxelkit::metrics::{average_precision, AP_IOU};
use voxelkit::segmentation::{segment_cells, segment_nuclei};
use voxelkit::synth::{generate_monolayer, MonolayerSpec};
use voxelkit::{Backend, NdImage};

#[test]
fn nuclei_and_cells_on_the_monolayer_phantom() {
    let ph = generate_monolayer(&MonolayerSpec::default()).unwrap();
    let nuclei = segment_nuclei(&ph.dna).unwrap();
    let ap = average_precision(&nuclei.labels, &ph.nuclei, AP_IOU).unwrap();
    assert!(ap >= 0.8, "nuclei AP {ap}");

    let cells = segment_cells(&ph.membrane, &ph.mito, &ph.dna, &nuclei.labels).unwrap();
    let n = nuclei.labels.as_labels().unwrap();
    let c = cells.labels.as_labels().unwrap();
    let mut owner: HashMap<u32, HashSet<u32>> = HashMap::new();
    for (&cell, &nuc) in c.iter().zip(n) {
        if cell != 0 {
            let set = owner.entry(cell).or_default();
            if nuc != 0 {
                set.insert(nuc);
            }
        }
    }
    assert!(!owner.is_empty());
    for (cell, nucs) in &owner {
        assert_eq!(nucs.len(), 1, "cell {cell} holds nuclei {nucs:?}");
    }
    assert!(owner.len() <= nuclei.labels.label_count().unwrap());
    let names: Vec<&str> = nuclei.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names.first(), Some(&"normalize"));
    assert_eq!(names.last(), Some(&"size_filter"));
}

#[test]
fn reruns_are_byte_identical() {
    let spec = MonolayerSpec { shape: vec![24, 128, 128], n_cells: 6, nucleus_radius: [9.0, 11.0], seed: 5, ..MonolayerSpec::default() };
    let ph = generate_monolayer(&spec).unwrap();
    let a = segment_nuclei(&ph.dna).unwrap().labels;
    let b = segment_nuclei(&ph.dna).unwrap().labels;
    assert_eq!(a.buffer(), b.buffer());
    let acc = segment_nuclei(&ph.dna.to_backend(Backend::Accelerated)).unwrap().labels;
    assert_eq!(a.as_labels().unwrap(), acc.as_labels().unwrap());
    let ca = segment_cells(&ph.membrane, &ph.mito, &ph.dna, &a).unwrap().labels;
    let cb = segment_cells(&ph.membrane, &ph.mito, &ph.dna, &b).unwrap().labels;
    assert_eq!(ca.buffer(), cb.buffer());
}

#[test]
fn constant_and_empty_inputs_give_no_labels() {
    let flat = NdImage::filled(vec![16, 48, 48], 0.3).unwrap();
    let nuclei = segment_nuclei(&flat).unwrap().labels;
    assert_eq!(nuclei.label_count().unwrap(), 0);
    let cells = segment_cells(&flat, &flat, &flat, &nuclei).unwrap().labels;
    assert_eq!(cells.label_count().unwrap(), 0);
}

#[test]
fn rejects_non_volumes() {
    let plane = NdImage::filled(vec![32, 32], 0.0).unwrap();
    assert!(segment_nuclei(&plane).is_err());
}
