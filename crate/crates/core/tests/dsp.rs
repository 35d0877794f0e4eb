use maskvoice::dsp::*;
use maskvoice::grid::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pcm_bytes(samples: &[i16], sr: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&sr.to_le_bytes());
    b.extend_from_slice(&(sr * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    b
}

fn seeded_wave(seed: u64, n: usize) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.random_range(-0.9..0.9)).collect(), 16000).unwrap()
}

#[test]
fn wav_silence_and_full_scale() {
    let w = decode_wav(&pcm_bytes(&[0; 100], 16000)).unwrap();
    assert_eq!(w.samples(), &[0.0; 100][..]);
    let w = decode_wav(&pcm_bytes(&[32767, -32768], 8000)).unwrap();
    assert_eq!(w.samples(), &[32767.0 / 32768.0, -1.0][..]);
    assert_eq!(w.sample_rate(), 8000);
}

#[test]
fn wav_round_trip_within_one_lsb() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let w = seeded_wave(3, 1000);
    write_wav(&path, &w).unwrap();
    let r = read_wav(&path).unwrap();
    assert_eq!(r.len(), w.len());
    for (a, b) in w.samples().iter().zip(r.samples()) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
}

#[test]
fn wav_rejects_bad_input() {
    assert!(decode_wav(b"nonsense").is_err());
    assert!(decode_wav(&pcm_bytes(&[], 16000)).is_err());
    let mut stereo = pcm_bytes(&[1, 2], 16000);
    stereo[22] = 2;
    assert!(decode_wav(&stereo).is_err());
    let mut float = pcm_bytes(&[1, 2], 16000);
    float[20] = 3;
    assert!(decode_wav(&float).is_err());
}

#[test]
fn stft_frame_count_and_zero_signal() {
    let w = Waveform::new(vec![0.0; 1000], 16000).unwrap();
    let s = stft(&w, 256, 100).unwrap();
    assert_eq!(s.bins().rows(), 1 + (1000 - 256) / 100);
    assert_eq!(s.bins().cols(), 129);
    assert!(s.bins().data().iter().all(|&v| v == 0.0));
    assert!(stft(&Waveform::new(vec![0.1; 100], 16000).unwrap(), 256, 100).is_err());
    assert!(stft(&w, 64, 128).is_err());
}

/// Direct O(N^2) DFT magnitudes of a Hann-windowed frame.
fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let win = hann(n);
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in frame.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += x * win[t] * ph.cos();
                im += x * win[t] * ph.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

#[test]
fn bin_center_sine_matches_direct_dft_and_concentrates() {
    let (n, k0) = (256usize, 20usize);
    let x: Vec<f64> = (0..n)
        .map(|t| (2.0 * std::f64::consts::PI * (k0 * t) as f64 / n as f64).sin() * 0.5)
        .collect();
    let s = stft(&Waveform::new(x.clone(), 16000).unwrap(), n, n).unwrap();
    let oracle = dft_magnitudes(&x);
    for (a, b) in s.bins().row(0).iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9);
    }
    let power: Vec<f64> = oracle.iter().map(|m| m * m).collect();
    let total: f64 = power.iter().sum();
    let lobe = power[k0 - 1] + power[k0] + power[k0 + 1];
    assert!(lobe / total >= 0.9);
    let argmax = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
    assert_eq!(argmax, k0);
}

#[test]
fn stft_parseval_per_frame() {
    let w = seeded_wave(11, 2000);
    let (n, hop) = (512, 128);
    let s = stft(&w, n, hop).unwrap();
    let win = hann(n);
    for t in 0..s.bins().rows() {
        let energy: f64 = (0..n).map(|i| (w.samples()[t * hop + i] * win[i]).powi(2)).sum();
        let row = s.bins().row(t);
        let mut spec = row[0].powi(2) + row[n / 2].powi(2);
        spec += 2.0 * row[1..n / 2].iter().map(|m| m * m).sum::<f64>();
        spec /= n as f64;
        assert!((energy - spec).abs() / energy <= 1e-6);
    }
}

#[test]
fn mel_project_cases() {
    let spec = Spectrogram::from_magnitudes(Grid::zeros(3, 5), 8, 4, 16000).unwrap();
    let ident = MelFilterbank::from_weights(Grid::from_fn(5, 5, |i, j| (i == j) as u8 as f64), 0.0, 8000.0).unwrap();
    assert!(mel_project(&spec, &ident).unwrap().bins().data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mags = Grid::from_fn(4, 5, |_, _| rng.random_range(0.0..2.0));
    let spec = Spectrogram::from_magnitudes(mags.clone(), 8, 4, 16000).unwrap();
    let mel = mel_project(&spec, &ident).unwrap();
    for (a, b) in mel.bins().data().iter().zip(mags.data()) {
        assert!((a - b * b).abs() < 1e-12);
    }

    let weights = Grid::from_fn(3, 5, |_, _| rng.random_range(0.0..1.0));
    let fb = MelFilterbank::from_weights(weights.clone(), 0.0, 8000.0).unwrap();
    let mel = mel_project(&spec, &fb).unwrap();
    for t in 0..4 {
        for m in 0..3 {
            let mut acc = 0.0;
            for k in 0..5 {
                acc += mags.get(t, k).powi(2) * weights.get(m, k);
            }
            assert!((mel.bins().get(t, m) - acc).abs() <= 1e-6);
        }
    }
    let narrow = MelFilterbank::from_weights(Grid::filled(2, 4, 1.0), 0.0, 8000.0).unwrap();
    assert!(mel_project(&spec, &narrow).is_err());
}

#[test]
fn htk_filterbank_is_valid() {
    let fb = MelFilterbank::htk(16000, 512, 40, 0.0, 8000.0).unwrap();
    assert_eq!((fb.n_mels(), fb.n_freq()), (40, 257));
    for m in 0..40 {
        let row = fb.weights().row(m);
        assert!(row.iter().all(|&w| w >= 0.0));
        assert!(row.iter().any(|&w| w > 0.0));
    }
    assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
    assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
}

#[test]
fn log_compress_floor_and_errors() {
    let mel = MelSpectrogram::new(Grid::new(1, 3, vec![1.0, 0.0, 2.0]).unwrap(), 16000, 128).unwrap();
    let l = log_compress(&mel, 1e-5).unwrap();
    assert_eq!(l.bins().get(0, 0), 0.0);
    assert!((l.bins().get(0, 1) - (-11.512925464970229)).abs() < 1e-12);
    assert!((l.bins().get(0, 2) - 2f64.ln()).abs() < 1e-15);
    assert!(log_compress(&mel, 0.0).is_err());
    assert!(log_compress(&mel, -1.0).is_err());
}

#[test]
fn mix_gain_cases() {
    let a = Waveform::new(vec![0.5, -0.5, 0.5, -0.5], 16000).unwrap();
    let b = Waveform::new(vec![-0.5, 0.5, 0.5, -0.5], 16000).unwrap();
    assert!((mix_at_snr_with_offset(&a, &b, 0.0, 0).unwrap().gain - 1.0).abs() < 1e-15);
    assert!((mix_at_snr_with_offset(&a, &b, 20.0, 0).unwrap().gain - 0.1).abs() < 1e-15);
    let silent = Waveform::new(vec![0.0; 4], 16000).unwrap();
    assert!(mix_at_snr_with_offset(&silent, &b, 0.0, 0).is_err());
    assert!(mix_at_snr_with_offset(&a, &silent, 0.0, 0).is_err());
    let short = Waveform::new(vec![0.1; 2], 16000).unwrap();
    assert!(mix_at_snr(&a, &short, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn si_sdr_cases() {
    let r = MelSpectrogram::new(Grid::new(1, 2, vec![1.0, 0.0]).unwrap(), 16000, 128).unwrap();
    let twice = r.with_bins(r.bins().map(|v| 2.0 * v)).unwrap();
    let orth = r.with_bins(Grid::new(1, 2, vec![0.0, 1.0]).unwrap()).unwrap();
    assert_eq!(si_sdr_mel(&r, &r).unwrap(), 100.0);
    assert_eq!(si_sdr_mel(&r, &twice).unwrap(), 100.0);
    assert_eq!(si_sdr_mel(&r, &orth).unwrap(), -100.0);
    let zero = r.with_bins(Grid::zeros(1, 2)).unwrap();
    assert!(si_sdr_mel(&zero, &r).is_err());
    let wide = MelSpectrogram::new(Grid::zeros(1, 3), 16000, 128).unwrap();
    assert!(si_sdr_mel(&r, &wide).is_err());
    // 3-4-5 triangle: alpha = 1, residual 1, target 1 -> 0 dB.
    assert!(si_sdr(&[1.0, 0.0], &[1.0, 1.0]).unwrap().abs() < 1e-12);
}

#[test]
fn mel_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.25);
    let c = GridContainer { magic: MELS_MAGIC, grid, sample_rate: 16000, frame_hop: 128 };
    let bytes = encode_grid_container(&c);
    assert_eq!(&bytes[..4], b"MELS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
    assert_eq!(bytes.len(), 24 + 12 * 4);
    assert_eq!(f32::from_le_bytes(bytes[24 + 4 * 5..24 + 4 * 6].try_into().unwrap()), 1.25);
    let path = dir.path().join("a.mels");
    write_grid_container(&path, &c).unwrap();
    assert_eq!(read_grid_container(&path).unwrap(), c);
    assert!(decode_grid_container(&bytes[..20]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixing_hits_requested_snr(seed in any::<u64>(), snr in -20.0f64..30.0) {
        let clean = seeded_wave(seed, 400);
        let noise = seeded_wave(seed ^ 0xabc, 700);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = mix_at_snr(&clean, &noise, snr, &mut rng).unwrap();
        prop_assert!((snr_db(clean.samples(), m.scaled_noise.samples()) - snr).abs() <= 1e-9);
        for ((n, c), s) in m.noisy.samples().iter().zip(clean.samples()).zip(m.scaled_noise.samples()) {
            prop_assert!((n - c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn si_sdr_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let e: Vec<f64> = r.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
        prop_assert!((si_sdr(&r, &e).unwrap() - si_sdr(&r, &scaled).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn log_compress_is_monotone_and_bounded(
        xs in prop::collection::vec(0.0f64..10.0, 12),
        floor in 1e-8f64..1e-2,
    ) {
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let mel = MelSpectrogram::new(Grid::new(3, 4, sorted).unwrap(), 16000, 128).unwrap();
        let l = log_compress(&mel, floor).unwrap();
        let d = l.bins().data();
        prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(d.iter().all(|&v| v >= floor.ln()));
    }

    #[test]
    fn mel_projection_is_non_negative(seed in any::<u64>()) {
        let w = seeded_wave(seed, 900);
        let an = MelAnalyzer::new(DspConfig::default()).unwrap();
        let mel = an.mel(&w).unwrap();
        prop_assert!(mel.bins().data().iter().all(|&v| v >= 0.0));
    }
}
