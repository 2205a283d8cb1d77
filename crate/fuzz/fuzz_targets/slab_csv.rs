#![no_main]
use libfuzzer_sys::fuzz_target;

use hsvp::poisson::DecayCertificate;

fuzz_target!(|data: &[u8]| {
    let cert = Some(DecayCertificate { amplitude: 1.0, rate: 1.0 });
    if let Ok(rho) = hsvp::io::read_slab_csv(data, cert) {
        let _ = hsvp::poisson::solve_slab(&rho);
    }
    let _ = hsvp::io::read_slab_csv(data, None);
});
