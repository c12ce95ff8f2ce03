app_name = "solar_harvest"
app_title = "Solar Harvest"
app_publisher = "TCL"
app_description = "Solar energy harvesting models and adaptive transmission policies for wireless sensors"
app_email = "totalenergies@techsavanna.com"
app_license = "mit"

# Irradiance loaders
# ------------------
# format tag -> callable(path) returning a frame with `timestamp` and `irradiance` text columns

irradiance_loaders = {
	"csv": "solar_harvest.solar_harvest.data_ingest.read_csv_records",
	"legacy": "solar_harvest.solar_harvest.data_ingest.read_legacy_records",
}

# Baseline policies
# -----------------
# policy name -> action rule used by the simulator

policy_sources = {
	"myopic1": "solar_harvest.solar_harvest.simulator.myopic_policy_i",
	"myopic2": "solar_harvest.solar_harvest.simulator.myopic_policy_ii",
}

# Output writers
# --------------
# --format value -> callable(document, path)

output_formats = {
	"json": "solar_harvest.cli.write_json",
	"csv": "solar_harvest.cli.write_csv",
}

# Reproduction manifests
# ----------------------

manifests = {
	"onoff-demo": "config/manifests/onoff-demo.json",
	"comparison": "config/manifests/comparison.json",
	"large-panel": "config/manifests/large-panel.json",
}
