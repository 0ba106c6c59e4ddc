#![no_main]

use jointspace::config::KeyValues;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(kv) = KeyValues::parse(text) {
        let again = KeyValues::parse(&kv.to_text()).unwrap();
        assert_eq!(again, kv);
    }
});
