import numpy as np
import pytest

from tactwin.contact import MaterialParams
from tactwin.decoder import DecodeConfig, build_decoder
from tactwin.frames import SensorConfig
from tactwin.render import IlluminationModel
from tactwin.suites import roundtrip_probes, screw_part_probes


@pytest.fixture(scope="session")
def sensor():
    return SensorConfig()


@pytest.fixture(scope="session")
def small_sensor():
    # 128 px covering the same 32 mm active area; fast for heavy loops.
    return SensorConfig(input_size=128, scale_mm_per_px=0.25)


@pytest.fixture(scope="session")
def material():
    return MaterialParams()


@pytest.fixture(scope="session")
def illum():
    return IlluminationModel()


@pytest.fixture(scope="session")
def decode_cfg():
    # One decode configuration for noiseless and noisy suites: the threshold
    # is set by the noisy design point, which only makes noiseless decoding
    # easier, and sharing it lets every suite reuse one calibration bundle.
    return DecodeConfig(noise_sigma=0.02)


@pytest.fixture(scope="session")
def roundtrip_decoder(material, illum, sensor, decode_cfg):
    return build_decoder(roundtrip_probes(), material, illum, sensor, decode_cfg)


@pytest.fixture(scope="session")
def screw_decoder(material, illum, sensor, decode_cfg):
    return build_decoder(screw_part_probes(), material, illum, sensor, decode_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
