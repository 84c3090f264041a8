//! Compare SA-MBR gradients from backpropagation, closed-form seed
//! injection and finite differences on random tiny models.

use sambr::gradcheck::{run, GradcheckConfig};

fn main() -> sambr::Result<()> {
    let report = run(&GradcheckConfig::default())?;
    for r in &report.instances {
        println!(
            "#{:<2} V={} K={} N={} |Y|<={}  E={:.4}  closed-form {:.1e}  finite-diff {:.1e}",
            r.index, r.vocab_size, r.speakers, r.hypotheses, r.max_hyp_len, r.expected_error,
            r.closed_form_max_rel, r.fd_max_rel
        );
    }
    println!(
        "{}: closed-form {:.2e} < {:.0e}, finite-diff {:.2e} < {:.0e}",
        if report.pass { "pass" } else { "FAIL" },
        report.closed_form_max_rel,
        report.closed_form_tol,
        report.fd_max_rel,
        report.fd_tol
    );
    Ok(())
}
