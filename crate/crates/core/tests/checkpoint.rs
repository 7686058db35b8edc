use crcnn_core::adam::AdamState;
use crcnn_core::checkpoint::{Checkpoint, TrainingMetadata, MAGIC};
use crcnn_core::model::{
    build_bcnn, build_network, build_scnn, layer_specs, Architecture, Layer, NetworkName,
};
use crcnn_core::Error;

fn trained_looking(name: NetworkName) -> Checkpoint {
    let mut net = match name {
        NetworkName::Bcnn => build_bcnn(3),
        NetworkName::Scnn => build_scnn(4),
    };
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        match layer {
            Layer::Conv(p) => p
                .bias
                .iter_mut()
                .enumerate()
                .for_each(|(j, b)| *b = (i * 31 + j) as f32 * 1e-3),
            Layer::BatchNorm(p) => {
                p.running_mean
                    .iter_mut()
                    .enumerate()
                    .for_each(|(j, v)| *v = j as f32 * 0.01);
                p.running_var
                    .iter_mut()
                    .enumerate()
                    .for_each(|(j, v)| *v = 1.0 + j as f32 * 0.02);
            }
            _ => {}
        }
    }
    let mut adam = AdamState::new(1e-4, net.parameter_lengths());
    adam.step = 17;
    adam.m
        .iter_mut()
        .flatten()
        .enumerate()
        .for_each(|(i, v)| *v = (i % 13) as f32 * 1e-5);
    adam.v
        .iter_mut()
        .flatten()
        .enumerate()
        .for_each(|(i, v)| *v = (i % 7) as f32 * 1e-9);
    Checkpoint {
        network: net,
        optimizer: Some(adam),
        metadata: TrainingMetadata {
            epochs_run: 12,
            final_loss: 0.123_456_789_012_345_6,
            seed: u64::MAX,
            dataset_mean: 0.4217,
            threshold: 0.8,
        },
    }
}

#[test]
fn round_trip_is_bitwise() {
    for name in [NetworkName::Bcnn, NetworkName::Scnn] {
        let ck = trained_looking(name);
        let bytes = ck.encode();
        assert_eq!(&bytes[..8], &MAGIC);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        let specs = layer_specs(name, Architecture::CANONICAL);
        assert_eq!(
            Checkpoint::decode_expecting(&bytes, name, &specs).unwrap(),
            ck
        );
    }
    let bare = Checkpoint::new(build_scnn(0));
    assert_eq!(Checkpoint::decode(&bare.encode()).unwrap(), bare);
}

#[test]
fn corrupt_inputs_are_rejected() {
    let bytes = trained_looking(NetworkName::Bcnn).encode();
    for cut in [0, 7, 8, 11, 100, bytes.len() - 1] {
        assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::decode(&long).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::decode(&magic), Err(Error::Format(_))));
}

#[test]
fn architecture_mismatch_is_named() {
    let bytes = Checkpoint::new(build_bcnn(0)).encode();
    let err = Checkpoint::decode_expecting(
        &bytes,
        NetworkName::Scnn,
        &layer_specs(NetworkName::Scnn, Architecture::CANONICAL),
    )
    .unwrap_err();
    assert!(err.to_string().contains("scnn"), "{err}");
    let small = Architecture {
        middle_layers: 3,
        ..Architecture::CANONICAL
    };
    let bytes = Checkpoint::new(build_network(NetworkName::Bcnn, small, 0)).encode();
    assert!(Checkpoint::decode(&bytes).is_ok());
    assert!(Checkpoint::decode_expecting(
        &bytes,
        NetworkName::Bcnn,
        &layer_specs(NetworkName::Bcnn, Architecture::CANONICAL)
    )
    .is_err());
}
