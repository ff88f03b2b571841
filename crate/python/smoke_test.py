"""Smoke test for the pyvdp extension module."""

import tempfile

import pyvdp


def main():
    clean = pyvdp.Video.moving_square(3, 16, 16)
    assert clean.shape == (3, 3, 16, 16)
    assert pyvdp.mean_psnr(clean, clean) == 99.0

    noisy = pyvdp.add_gaussian(clean, 20.0, 1)
    before = pyvdp.mean_psnr(noisy, clean)

    cfg = pyvdp.TaskConfig("denoise")
    cfg.epochs = 60
    fit = pyvdp.denoise(noisy, cfg)
    assert len(fit.curve) == 60
    assert fit.curve[-1][1] < fit.curve[0][1]
    out = fit.frames
    assert out.shape == clean.shape
    print(f"denoise: input {before:.2f} dB, output {pyvdp.mean_psnr(out, clean):.2f} dB")

    assert len(fit.interpolate(2)) == 5
    assert pyvdp.TaskConfig.preset("paper-denoise").weights == (1.0, 1e-4, 1e-4)

    lr = pyvdp.make_lowres(pyvdp.Video.moving_square(2, 16, 16), 2)
    cfg = pyvdp.TaskConfig("superres")
    cfg.epochs = 2
    assert pyvdp.superresolve(lr, 2, cfg).frames.shape == (2, 3, 16, 16)

    m = pyvdp.nmi_matrix(pyvdp.replace_frame_with_noise(clean, 1, 3))
    assert abs(m[1][1] - 1.0) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        clean.save(d + "/clean")
        assert pyvdp.Video.load(d + "/clean").shape == clean.shape
        assert pyvdp.run_cli(["metrics", "--in", d + "/clean", "--reference", d + "/clean"]) == 0
        assert pyvdp.run_cli(["denoise"]) == 2

    try:
        pyvdp.Video([0.0] * 4, (1, 1, 2, 3))
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch was accepted")
    print("pyvdp smoke test passed")


if __name__ == "__main__":
    main()
