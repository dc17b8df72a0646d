from ricciflow_lab import helpers

helpers.app_start()
