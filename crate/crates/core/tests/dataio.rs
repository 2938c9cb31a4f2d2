use std::collections::BTreeMap;

use orbitall::dataio::*;
use orbitall::system::MolecularSystem;
use proptest::prelude::*;

fn system_strategy() -> impl Strategy<Value = MolecularSystem> {
    (1usize..8)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(prop::sample::select(vec![1u32, 6, 7, 8]), n),
                prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), n),
                -1i32..=1,
                prop::option::of(prop::array::uniform3(-0.02f64..0.02)),
            )
        })
        .prop_filter_map("parity", |(z, xyz, q, field)| {
            let mut s = MolecularSystem::new(z, xyz, q, 1);
            s.field = field;
            if s.num_electrons() % 2 != 0 {
                s.multiplicity = 2;
            }
            s.validate().ok().map(|_| s)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn parse_serialize_parse_is_identity(
        system in system_strategy(),
        energy in -1e4f64..0.0,
        homo in prop::option::of(-20.0f64..0.0),
        parent in prop::option::of("[a-z]{1,6}"),
    ) {
        let mut labels = BTreeMap::from([("energy_ev".to_string(), energy)]);
        if let Some(h) = homo {
            labels.insert("fmo_alpha_homo_ev".into(), h);
        }
        let mut extra = BTreeMap::new();
        if let Some(p) = parent {
            extra.insert("parent".to_string(), p);
        }
        extra.insert("note".to_string(), "two words".to_string());
        let rec = XyzRecord { system, labels, extra };
        let once = parse_xyz(&write_xyz(&rec), "mem").unwrap().remove(0);
        prop_assert_eq!(&once.labels, &rec.labels);
        prop_assert_eq!(&once.extra, &rec.extra);
        prop_assert_eq!(once.system.field, rec.system.field);
        prop_assert_eq!(
            (&once.system.atomic_numbers, once.system.charge, once.system.multiplicity),
            (&rec.system.atomic_numbers, rec.system.charge, rec.system.multiplicity)
        );
        for (a, b) in once.system.coordinates.iter().zip(&rec.system.coordinates) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_respect_parents(
        n in 4usize..60,
        seed in 0u64..1000,
        parents in 1usize..20,
        balance in any::<bool>(),
    ) {
        let species = orbitall::system::Species::ALL;
        let records = (0..n)
            .map(|i| ManifestRecord {
                id: format!("r{i}"),
                geometry: format!("r{i}.xyz"),
                frame: 0,
                charge: 0,
                multiplicity: 1,
                field: None,
                labels: BTreeMap::new(),
                species: species[i % 4],
                split: None,
                parent: (i % 3 == 0).then(|| format!("p{}", i % parents)),
            })
            .collect();
        let m = DatasetManifest { records };
        match split_dataset(&m, [0.6, 0.2, 0.2], seed, balance) {
            Ok(s) => {
                s.validate().unwrap();
                // balancing may drop records, but no parent spans two splits
                let mut by_parent: BTreeMap<&str, Split> = BTreeMap::new();
                for r in &s.records {
                    if let (Some(p), Some(split)) = (&r.parent, r.split) {
                        let prev = by_parent.entry(p).or_insert(split);
                        prop_assert_eq!(*prev, split);
                    }
                }
                if !balance {
                    prop_assert!(s.records.iter().all(|r| r.split.is_some()));
                }
                prop_assert_eq!(s, split_dataset(&m, [0.6, 0.2, 0.2], seed, balance).unwrap());
            }
            Err(e) => prop_assert!(balance && matches!(e, orbitall::Error::InsufficientData(_))),
        }
    }
}

#[test]
fn manifest_and_features_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let text = "3\ncharge=1 multiplicity=2 energy_ev=-250.5 parent=w\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n";
    let path = dir.path().join("w.xyz");
    std::fs::write(&path, text).unwrap();
    let rec = parse_xyz(text, "w.xyz").unwrap().remove(0);
    let id = record_id(&path, 0, 1, &rec);
    assert_eq!(id, "w");
    let m = DatasetManifest {
        records: vec![manifest_record(id.clone(), "w.xyz".into(), 0, &rec)],
    };
    assert_eq!(m.records[0].species, orbitall::system::Species::Cation);
    assert_eq!(m.records[0].parent.as_deref(), Some("w"));
    let mp = dir.path().join(MANIFEST_FILE);
    m.save(&mp).unwrap();
    assert_eq!(DatasetManifest::load(&mp).unwrap(), m);

    let (qmm, low) = orbitall::scf::run_scf(&rec.system).unwrap();
    write_qmm(&feature_path(dir.path(), &id), &qmm).unwrap();
    assert_eq!(read_qmm(&feature_path(dir.path(), &id)).unwrap(), qmm);
    let sp = dir.path().join(SIDECAR_FILE);
    let rows = vec![
        SidecarRow::ok(&id, &low),
        SidecarRow::failed(
            "bad",
            &orbitall::Error::ScfNotConverged {
                iterations: 200,
                last_rms: 1e-3,
                last_energy: -1.0,
            },
        ),
    ];
    write_sidecar(&sp, &rows).unwrap();
    let back = read_sidecar(&sp).unwrap();
    assert_eq!(back, rows);
    assert!(back[1].values().is_none());
    assert_eq!(
        back[0].values().unwrap().energy_ev,
        low.energy * orbitall::units::HARTREE_TO_EV
    );
}
