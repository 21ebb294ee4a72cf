# ruff: noqa: F401
from bellbox.tensorio.tensor import Tensor
from bellbox.tensorio.tensor_file import (
    TensorDtype,
    TensorFile,
    read_packed,
    read_tensor,
    read_tensor_file,
    write_packed,
    write_tensor,
)
from bellbox.tensorio.csv_report import emit_csv, format_csv
