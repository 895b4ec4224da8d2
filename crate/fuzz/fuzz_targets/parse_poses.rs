#![no_main]

use libfuzzer_sys::fuzz_target;
use smsr::io::{parse_poses, write_poses};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(poses) = parse_poses(text) {
        let mut buf = Vec::new();
        write_poses(&poses, &mut buf).unwrap();
        let again = parse_poses(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, poses);
    }
});
