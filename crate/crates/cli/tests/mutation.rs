//! Runs alone in its process: the fault switch is global.

use palmnet_cli::{execute, Command, GradcheckArgs, EXIT_RUNTIME};

fn gradcheck() -> Result<(), palmnet_cli::CliError> {
    execute(Command::Gradcheck(GradcheckArgs {
        instances: 3,
        seed: 1,
        out: None,
    }))
}

#[test]
fn sign_flip_in_conv_backward_is_caught() {
    gradcheck().unwrap();
    ndgrad::fault::set_conv_sign_flip(true);
    let err = gradcheck().unwrap_err();
    ndgrad::fault::set_conv_sign_flip(false);
    assert_eq!(err.exit_code(), EXIT_RUNTIME);
    assert!(err.to_string().contains("conv2d"), "{err}");
    let reports = palmnet::gradsuite::run_suite(3, 1).unwrap();
    assert!(reports.iter().all(|r| r.passed()));
}
