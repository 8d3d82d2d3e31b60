"""Full-duplex mmWave integrated sensing and communication simulator.

A numpy/scipy library covering hybrid-beamformed OFDM transmission,
multi-target radar echo and self-interference channels, subspace DoA
estimation, delay/Doppler likelihood search, joint beamformer and
SI-cancellation design, and a Monte Carlo experiment harness.
"""

from .arrays import (ArrayConfig, assemble_block_diagonal, dft_codebook,
                     steering_matrix, steering_vector)
from .channels import (DEFAULT_RCS_M2, RadarTarget, Scenario, add_noise,
                       dl_channel, generate_scenario, load_scenario,
                       radar_echo, reflection_amplitude, rician_si_channel,
                       save_scenario)
from .harness import (BENCHMARK_GEOMETRY_DEG_M, ExperimentConfig,
                      ExperimentReport, RunRecord, aggregate_records,
                      benchmark_scenario, bootstrap_beamformers,
                      desk_experiment, ideal_rate_baseline, paper_experiment,
                      read_run_records, run_experiment, run_single,
                      write_csv_reports)
from .ofdm import OfdmGrid, OfdmParams
from .optimizer import (OptimizationResult, OptimizerConfig, VirtualChannels,
                        check_constraints, design_cancellation,
                        design_digital_precoder, dl_snr, dump_design,
                        optimize, radar_snr, select_rx_beams, select_tx_beams,
                        virtual_channels, water_filling)
from .sensing import (Association, MusicSpectrum, SensingEstimate,
                      associate_estimates, delay_doppler_map,
                      estimate_delay_doppler, music_spectrum,
                      quotient_signal, sample_covariance, spectrum_to_csv)
from .transceiver import (BeamformerSet, PowerLimitError, dl_rate,
                          effective_si_channel, fd_receive, make_symbol_grid,
                          residual_si_power, transmit, ue_receive)
from .units import SPEED_OF_LIGHT, dbm_to_watts, watts_to_dbm

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
