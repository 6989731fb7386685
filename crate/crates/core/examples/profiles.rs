//! Persisting an application's chosen wirings as a profile file and checking
//! it against the live registry when reloading.

use hyperwire::registry::{Profile, ProfileStore, Registry, Requirement};
use hyperwire::sim::DeviceKind;
use hyperwire::Catalog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("hyperwire-profiles-{}", std::process::id()));
    let store = ProfileStore::open(&dir)?;

    let mut reg = Registry::new(Catalog::standard());
    reg.register_device("gamepad", DeviceKind::Gamepad.capabilities(), None, 0)?;
    reg.register_device("joystick", DeviceKind::Joystick.capabilities(), None, 0)?;
    let app = reg.register_app(
        "viewer",
        vec![Requirement::new("rotation3d", "rotation/3/unit_signed/absolute".parse()?, "orbit")],
        None,
    )?;

    let mut profile = Profile::new(&app, 1_000);
    let best = reg.candidate_wirings(&app, "rotation3d")?.remove(0);
    profile.chosen.insert("rotation3d".into(), best);
    store.save(&profile)?;
    println!("saved {:?} in {}", store.list()?, dir.display());

    let loaded = store.load(&app)?;
    assert_eq!(loaded, profile);
    reg.check_profile(&loaded)?;
    println!("{}", loaded.to_canonical_json());

    // after the joystick leaves, the stored wiring no longer validates
    let lost = reg.unregister_device("joystick")?;
    println!("joystick left, lost {lost:?}");
    let stored = &loaded.chosen["rotation3d"];
    if let Err(e) = hyperwire::validate(stored, &reg.capability_types(), reg.catalog()) {
        println!("stored wiring: {}", e.report());
    }
    println!("candidates now: {}", reg.candidate_wirings(&app, "rotation3d")?.len());

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
