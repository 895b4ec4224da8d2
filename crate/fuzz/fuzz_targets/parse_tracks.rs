#![no_main]

use libfuzzer_sys::fuzz_target;
use smsr::io::{parse_tracks, write_tracks};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tracks) = parse_tracks(text) {
        let mut buf = Vec::new();
        write_tracks(&tracks, &mut buf).unwrap();
        let again = parse_tracks(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, tracks);
    }
});
