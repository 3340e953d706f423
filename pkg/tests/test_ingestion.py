import numpy as np
import pytest

from opscore.core.exceptions import IngestionError
from opscore.schemas.experiment import StudySchema
from opscore.services.ingestion_service import IngestionService


def write(tmp_path, text: str):
    path = tmp_path / "study.csv"
    path.write_text(text, encoding="utf-8")
    return path


STUDY = """id_score,sex,site,age,arm,death
0.5,F,north,61,B,0
1.5,M,south,70,A,1
2.5,F,east,55,C,0
3.5,M,north,48,A,1
4.5,F,south,66,B,0
5.5,M,east,59,C,1
"""


def test_categorical_and_always_adjust_layout(tmp_path):
    schema = StudySchema(treatment="arm", outcome="death", always_adjust=["age", "sex"], categorical=["sex", "site"])
    study = IngestionService.ingest_csv(write(tmp_path, STUDY), schema)
    d = study.dataset
    assert d.names() == ("age", "sex=M", "id_score", "site=north", "site=south")
    assert study.always_include == (0, 1)
    assert study.spec.exempt == (True, True, False, False, False)
    assert study.sources["site"] == (3, 4)
    np.testing.assert_array_equal(d.x[:, 1], [0, 1, 0, 1, 0, 1])
    np.testing.assert_array_equal(d.x[:, 3], [1, 0, 0, 1, 0, 0])
    assert study.arm_labels == ("A", "B", "C")
    np.testing.assert_array_equal(d.z, [2, 1, 3, 1, 2, 3])


def test_declared_treatment_levels_set_arm_order(tmp_path):
    schema = StudySchema(treatment="arm", outcome="death", categorical=["sex", "site"], treatment_levels=["C", "B", "A"])
    study = IngestionService.ingest_csv(write(tmp_path, STUDY), schema)
    np.testing.assert_array_equal(study.dataset.z, [2, 3, 1, 3, 2, 1])


def test_error_coordinates(tmp_path):
    bad = STUDY.replace("2.5,F,east,55", "2.5,F,east,old")
    schema = StudySchema(treatment="arm", outcome="death", categorical=["sex", "site"])
    with pytest.raises(IngestionError) as err:
        IngestionService.ingest_csv(write(tmp_path, bad), schema)
    assert err.value.row == 3 and err.value.column == "age"

    missing = STUDY.replace("3.5,M,north,48,A,1", "3.5,M,north,48,A,")
    with pytest.raises(IngestionError) as err:
        IngestionService.ingest_csv(write(tmp_path, missing), schema)
    assert err.value.row == 4 and err.value.column == "death"


def test_unknown_columns_and_levels(tmp_path):
    path = write(tmp_path, STUDY)
    with pytest.raises(IngestionError, match="unknown column"):
        IngestionService.ingest_csv(path, StudySchema(treatment="arm", outcome="status_code"))
    levels = StudySchema(treatment="arm", outcome="death", categorical=["sex", "site"], treatment_levels=["A", "B"])
    with pytest.raises(IngestionError, match="not in"):
        IngestionService.ingest_csv(path, levels)


def test_non_indicator_outcome(tmp_path):
    path = write(tmp_path, STUDY.replace("A,1\n2.5", "A,2\n2.5"))
    schema = StudySchema(treatment="arm", outcome="death", categorical=["sex", "site"])
    with pytest.raises(IngestionError) as err:
        IngestionService.ingest_csv(path, schema)
    assert err.value.row == 2


def test_time_to_event_encoding(tmp_path):
    text = "x,arm,days,event\n1,A,10,1\n2,B,40,0\n3,A,400,0\n4,B,365,1\n5,A,500,1\n6,B,20,0\n"
    schema = StudySchema(treatment="arm", time="days", status="event", horizon=365)
    d = IngestionService.ingest_csv(write(tmp_path, text), schema).dataset
    np.testing.assert_array_equal(d.outcome.r, [1, 0, 1, 1, 1, 0])
    np.testing.assert_array_equal(d.outcome.y, [1.0, np.nan, 0.0, 0.0, 0.0, np.nan])


def test_schema_rules():
    with pytest.raises(ValueError):
        StudySchema(treatment="arm", outcome="y", time="t", status="s", horizon=1.0)
    with pytest.raises(ValueError):
        StudySchema(treatment="arm", time="t", status="s")
    with pytest.raises(ValueError):
        StudySchema(treatment="arm", outcome="y", always_adjust=["a"], covariates=["a"])


def test_binary_export_reads_back(tmp_path, binary_dataset):
    path = tmp_path / "binary.csv"
    schema = IngestionService.export_csv(binary_dataset, path, arm_labels=["ctl", "low", "high"], always_adjust=["x1"])
    study = IngestionService.ingest_csv(path, schema)
    d = study.dataset
    np.testing.assert_array_equal(d.x, binary_dataset.x)
    np.testing.assert_array_equal(d.z, binary_dataset.z)
    np.testing.assert_array_equal(d.outcome.y, binary_dataset.outcome.y)
    assert study.arm_labels == ("ctl", "low", "high")
    assert study.always_include == (0,)


def test_censored_export_reads_back(tmp_path, censored_dataset):
    path = tmp_path / "censored.csv"
    schema = IngestionService.export_csv(censored_dataset, path, censoring_columns=["x2"])
    study = IngestionService.ingest_csv(path, schema)
    out, src = study.dataset.outcome, censored_dataset.outcome
    np.testing.assert_array_equal(out.r, src.r)
    np.testing.assert_array_equal(out.y, src.y)
    np.testing.assert_array_equal(out.t_obs, src.t_obs)
    assert study.censoring_columns == (1,)
