use std::path::PathBuf;

use igbem::scenes::{self, Incidence};
use igbem::{Problem, Scene};

fn shipped(name: &str) -> Scene {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes")
        .join(format!("{name}.json"));
    Scene::load(path).unwrap()
}

#[test]
fn shipped_scenes_match_the_generators() {
    assert_eq!(shipped("sphere"), scenes::sphere(3.0, 9).unwrap());
    assert_eq!(shipped("cube"), scenes::cube(1.0).unwrap());
    assert_eq!(shipped("reflector"), scenes::reflector().unwrap());
    assert_eq!(
        shipped("resonator-vertical"),
        scenes::resonator(Incidence::Vertical).unwrap()
    );
    assert_eq!(
        shipped("resonator-horizontal"),
        scenes::resonator(Incidence::Horizontal).unwrap()
    );
    assert_eq!(shipped("duct"), scenes::duct(1.0, 1).unwrap());
}

#[test]
fn scenes_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    for scene in [
        scenes::sphere(2.0, 1).unwrap(),
        scenes::reflector().unwrap(),
        scenes::duct(2.0, 1).unwrap(),
    ] {
        let path = dir.path().join("scene.json");
        scene.save(&path).unwrap();
        assert_eq!(Scene::load(&path).unwrap(), scene);
    }
}

#[test]
fn analysis_sizes() {
    let size = |s: Scene| {
        let p = Problem::from_scene(&s).unwrap();
        (p.model.n_unknowns(), p.analysis_template().n_unknowns())
    };
    assert_eq!(size(shipped("sphere")), (98, 866));
    assert_eq!(size(shipped("reflector")), (92, 548));
    assert_eq!(size(shipped("resonator-vertical")), (282, 1314));
}

#[test]
fn malformed_scenes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"name\": \"x\"}").unwrap();
    assert!(Scene::load(&path).is_err());

    let mut scene = scenes::reflector().unwrap();
    scene.patches[0].weights[0][0] = -1.0;
    assert!(scene.validate().is_err() || scene.model().is_err());
}
