"""Threshold secret sharing for relational warehouses: share tables across
cloud providers, aggregate directly on shares, verify integrity twice over."""

from .field import P_DEFAULT, Polynomial, lagrange_interpolate, poly_eval
from .keyed import KeyMaterial, PrivacyWarning, init_participants
from .sharing import (
    DEFAULT_BIAS,
    RECONSTRUCTIONS,
    Column,
    Schema,
    ShareBundle,
    StorageGroup,
    decode,
    encode,
    group_from_bitmap,
    reconstruct_value,
    recover_share,
    select_storage_group,
    share_record,
    share_value,
)
from .sigtree import BreachReport, SignatureTree, WaryTree
from .store import CspStore, DerivedColumn, StoredRecord, Warehouse
from .query import execute, headers, parse, plan
from .cube import (
    CubeHierarchy,
    CubeMeasure,
    CubeSpec,
    cube_build,
    cube_query,
    cube_refresh,
    cube_schema,
    cube_table,
)
from .cost import (
    PricingPolicy,
    WorkloadProfile,
    access_profiles,
    compute_cost,
    reference_pricing,
    share_volume,
    sharing_profiles,
    storage_comparison,
    storage_cost,
    vm_assign,
    volume_curves,
)
from .config import AppConfig, load_config

__all__ = [
    "P_DEFAULT",
    "Polynomial",
    "lagrange_interpolate",
    "poly_eval",
    "KeyMaterial",
    "PrivacyWarning",
    "init_participants",
    "DEFAULT_BIAS",
    "RECONSTRUCTIONS",
    "Column",
    "Schema",
    "ShareBundle",
    "StorageGroup",
    "decode",
    "encode",
    "group_from_bitmap",
    "reconstruct_value",
    "recover_share",
    "select_storage_group",
    "share_record",
    "share_value",
    "BreachReport",
    "SignatureTree",
    "WaryTree",
    "CspStore",
    "DerivedColumn",
    "StoredRecord",
    "Warehouse",
    "execute",
    "headers",
    "parse",
    "plan",
    "CubeHierarchy",
    "CubeMeasure",
    "CubeSpec",
    "cube_build",
    "cube_query",
    "cube_refresh",
    "cube_schema",
    "cube_table",
    "PricingPolicy",
    "WorkloadProfile",
    "access_profiles",
    "compute_cost",
    "reference_pricing",
    "share_volume",
    "sharing_profiles",
    "storage_comparison",
    "storage_cost",
    "vm_assign",
    "volume_curves",
    "AppConfig",
    "load_config",
]
