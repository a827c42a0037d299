"""dqdcap: capacitance extraction and single-electron charge-transfer modeling
for buried double-dot / SET nanodevices."""

__version__ = "0.1.0"
